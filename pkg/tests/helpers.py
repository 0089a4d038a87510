"""Shared test utilities: hand-built detector weights for clustered data.

With zero photo GRUs and a signed-identity skip, photo vectors copy the
raw feature into positive/negative halves. The scene GRU is then rigged
(update gate saturated open, recurrent candidate weights zero) so its
state after any photo of cluster c is exactly
    h[0] = tanh((c+1) / (10K)),  h[1] = tanh(0.1)
and the linear boundary classifier fires precisely when the incoming
photo's cluster level exceeds the stored level by a full step. Cluster
ids inside an album ascend, so this reproduces the gold boundaries.
"""

import math

import numpy as np

GAIN = 10000.0   # drives the classifier sigmoid to exact 0/1 saturation
BASE = 0.15      # bias floor; above the max level so photo 1 never fires


def fill_oracle_scene_weights(ps, spec):
    """Overwrite photo+scene weights in-place; needs K <= feature_dim."""
    k, f, s = spec.num_clusters, spec.feature_dim, spec.cluster_separation
    assert k <= f, "oracle construction needs one-hot cluster centers"
    dv = 2 * f

    for d in ("fwd", "bwd"):
        for name in ("w_x", "w_h", "b"):
            ps[f"photo.{d}.{name}"].data[...] = 0.0
    skip = np.zeros((f, dv))
    skip[:, :f] = np.eye(f)
    skip[:, f:] = -np.eye(f)
    ps["photo.skip.w"].data[...] = skip

    level = np.array([(c + 1) / (10.0 * k) for c in range(f)])
    w_x = np.zeros((dv, 3 * dv))
    w_x[:f, 2 * dv + 0] = level / s          # candidate coord 0: cluster level
    b = np.zeros(3 * dv)
    b[:dv] = 50.0                            # update gate saturates to 1.0
    b[2 * dv + 1] = 0.1                      # candidate coord 1: presence mark
    ps["scene.gru.w_x"].data[...] = w_x
    ps["scene.gru.w_h"].data[...] = 0.0
    ps["scene.gru.b"].data[...] = b

    w_v = np.zeros(dv)
    w_v[:f] = GAIN * level / s
    w_h = np.zeros(dv)
    w_h[0] = -GAIN
    w_h[1] = GAIN * (BASE - 1.0 / (20.0 * k)) / math.tanh(0.1)
    ps["scene.detect.w_v"].data[...] = w_v
    ps["scene.detect.w_h"].data[...] = w_h
    ps["scene.detect.b"].data[...] = -GAIN * BASE
