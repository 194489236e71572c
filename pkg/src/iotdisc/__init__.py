"""Space-efficient keyword discovery routing for peer-to-peer data networks.

The package is organized around five pieces:

* :mod:`iotdisc.sumtree` -- summarization trees (alphabetical trie, hash
  tree, clustering tree), keyword codes, sibling-count vectors and the
  analytic sibling-set size estimators.
* :mod:`iotdisc.rtable` -- routing tables: the bit-packed hybrid
  table-trie for bit codes and a character trie for string codes,
  including the summarization (compression) algorithms.
* :mod:`iotdisc.protocol` -- node-level matching semantics plus the
  advertisement and query-forwarding protocols.
* :mod:`iotdisc.netsim` -- deterministic simulation harness: topologies,
  stream placement, workloads, metrics, growth and reestablishment.
* :mod:`iotdisc.cli` -- experiment runner and corpus tooling.
"""

__version__ = "0.1.0"
