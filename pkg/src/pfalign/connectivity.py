"""Synapse graph of a network plus its feedback path, and a reciprocity audit.

Units are the neurons of each activation layer (one unit per channel for
convolutional maps, so kernels become single channel-to-channel synapses)
and, for the product rules, the intermediate error populations.  Identity
skip connections carry no synaptic weight and are not part of the graph.
"""

from dataclasses import dataclass

import numpy as np

from .feedback import BP, DFA, DirectFeedback, ProductFeedback


@dataclass
class SynapseGraph:
    n_nodes: int
    src: np.ndarray
    dst: np.ndarray

    @property
    def n_edges(self):
        return int(self.src.size)


def _channel_map(shape):
    """Index map from flattened units of an activation to graph units."""
    size = int(np.prod(shape))
    if len(shape) == 3:
        return np.arange(size) // (shape[1] * shape[2]), shape[0]
    return np.arange(size), size


def _nonzero_pairs(matrix):
    """(row, col) of nonzero entries; 4-D kernels collapse their spatial axes."""
    m = np.asarray(matrix)
    if m.ndim == 4:
        m = np.abs(m).sum(axis=(2, 3))
    rows, cols = np.nonzero(m)
    return rows, cols


def synapse_graph(net, state):
    maps, offsets = [], []
    total = 0
    for shape in net.shapes:
        idx, count = _channel_map(shape)
        maps.append(idx)
        offsets.append(total)
        total += count

    def unit(layer_idx, flat):
        # dense weights index flattened inputs; conv weights index channels
        return offsets[layer_idx] + flat

    def in_units(i, cols):
        layer = net.layers[i]
        if layer.kind == "dense":
            return unit(i, maps[i][cols])
        return unit(i, cols)

    src, dst = [], []
    L = net.depth
    for i, layer in enumerate(net.layers):
        def out_idx(rows, i=i):
            return unit(i + 1, rows)

        rows, cols = _nonzero_pairs(layer.W)  # W[out, in]
        src.append(in_units(i, cols))
        dst.append(out_idx(rows))

        if state.tag == BP:
            src.append(out_idx(rows))
            dst.append(in_units(i, cols))
            continue
        fb = state.layers[i]
        if isinstance(fb, ProductFeedback):
            n_bar = fb.B.shape[0]
            base = total
            total += n_bar
            k, o = _nonzero_pairs(fb.B)  # B[k, out]
            src.append(out_idx(o))
            dst.append(base + k)
            j, k = _nonzero_pairs(fb.R)  # R[in, k]
            src.append(base + k)
            dst.append(in_units(i, j))
        elif isinstance(fb, DirectFeedback):
            j, o = _nonzero_pairs(fb.B)  # B[in, out]
            if state.tag == DFA:
                src.append(unit(L, maps[L][o]))
                dst.append(unit(i, maps[i][j]))
            else:
                src.append(out_idx(o))
                dst.append(in_units(i, j))
    return SynapseGraph(
        n_nodes=total,
        src=np.concatenate(src).astype(np.int64),
        dst=np.concatenate(dst).astype(np.int64),
    )


def bidirectional_pairs(graph):
    """Number of unordered unit pairs connected in both directions."""
    keep = graph.src != graph.dst
    s, d = graph.src[keep], graph.dst[keep]
    n = graph.n_nodes
    forward = np.unique(s * n + d)
    backward = np.unique(d * n + s)
    return int(np.intersect1d(forward, backward, assume_unique=True).size // 2)
