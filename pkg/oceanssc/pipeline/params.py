"""
Learnable parameters of the full model as one ordered name -> array mapping.

Names are dotted paths, e.g. ``proj.s8.w``, ``sgda1.gsga.gate_w``,
``decoder.layer2_w``, ``head.b2``. Typed views (``Sga3dParams``,
``GsgaParams``, ...) share memory with the mapping.

    params = init_params(config, seed=0)
    params.save("params.ocnp")
    same = ModelParams.load("params.ocnp")
"""

from __future__ import annotations

from collections import OrderedDict
from logging import getLogger
from typing import Dict, Iterator, Mapping, Optional

import numpy as np

from ..attention.gsga import GsgaParams
from ..attention.sga3d import Sga3dParams
from ..config import HarnessConfig
from ..ild.decoder import DecoderParams
from ..ild.refine import RefineParams
from ..ild.selection import DecisionParams
from ..utils.io import load_tensors, save_tensors

log = getLogger(__name__)

# F_bev projection scale at initialisation
BEV_INIT_SCALE = 0.1


class ModelParams(Mapping):
    def __init__(self, arrays: Mapping[str, np.ndarray]):
        self._arrays = OrderedDict((k, np.asarray(v, dtype=np.float64)) for k, v in arrays.items())

    # mapping protocol
    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def __repr__(self) -> str:
        return f"ModelParams({len(self)} tensors, {self.size} values)"

    @property
    def size(self) -> int:
        return int(sum(a.size for a in self._arrays.values()))

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self._arrays.items()})

    def zeros_like(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, np.zeros_like(v)) for k, v in self._arrays.items())

    def apply_gradient(self, grads: Mapping[str, np.ndarray], lr: float) -> "ModelParams":
        """Plain gradient-descent step; returns a new instance."""
        return ModelParams({k: v - lr * grads[k] for k, v in self._arrays.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self._arrays.values())

    # ------------------------------------------------------------------
    # typed views
    # ------------------------------------------------------------------

    def _group(self, prefix: str) -> Dict[str, np.ndarray]:
        cut = len(prefix) + 1
        return {k[cut:]: v for k, v in self._arrays.items() if k.startswith(prefix + ".")}

    def sga(self, layer: int) -> Sga3dParams:
        return Sga3dParams(**self._group(f"sgda{layer}.sga"))

    def gsga(self, layer: int, bypass_gate: bool = False) -> GsgaParams:
        return GsgaParams(**self._group(f"sgda{layer}.gsga"), bypass_gate=bypass_gate)

    def decoder(self) -> DecoderParams:
        group = self._group("decoder")
        n = sum(1 for k in group if k.endswith("_w") and k.startswith("layer"))
        return DecoderParams(group["seed_w"], group["seed_b"],
                             [group[f"layer{i}_w"] for i in range(n)],
                             [group[f"layer{i}_b"] for i in range(n)])

    def decision(self) -> DecisionParams:
        return DecisionParams(**self._group("decision"))

    def refine(self) -> RefineParams:
        return RefineParams(**self._group("refine"))

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def save(self, path) -> None:
        save_tensors(path, self._arrays)

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls(load_tensors(path))


def _prefixed(prefix: str, arrays: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in arrays.items()}


def init_params(config: HarnessConfig, seed: Optional[int] = None,
                rng: Optional[np.random.Generator] = None, identity: bool = True) -> ModelParams:
    """
    Draw parameters for ``config``.

    With ``identity`` the output projections of SGA3D, GSGA, the feed-forward
    block, the refinement and the last decoder layer start at zero, so the
    SGDA and ILD stack leaves the lifted volume unchanged.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed if seed is None else seed)
    c = config.channels
    x, y, z = config.grid.dims
    d = config.binning.num_bins

    def draw(rows, cols, scale=1.0):
        return rng.standard_normal((rows, cols)) * scale / np.sqrt(rows)

    def out_proj(rows, cols):
        return np.zeros((rows, cols)) if identity else draw(rows, cols, 0.5)

    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for s in config.sorted_scales:
        cf = config.feature_channels[s]
        arrays[f"proj.s{s}.w"] = draw(cf, c)
        arrays[f"proj.s{s}.b"] = np.zeros(c)
        arrays[f"depth.s{s}.w"] = np.zeros((cf, d)) if identity else draw(cf, d, 0.1)
        arrays[f"depth.s{s}.b"] = np.zeros(d)
    arrays["context.w"] = draw(config.context_channels, c)

    for i in range(config.layers):
        arrays[f"sgda{i}.norm1"] = np.ones(c)
        arrays.update(_prefixed(f"sgda{i}.sga", dict(
            wq=draw(c, c), wk=draw(c, c), wv=draw(c, c), wo=out_proj(c, c))))
        arrays[f"sgda{i}.norm2"] = np.ones(c)
        gsga = GsgaParams.init(rng, c, c, config.sam_channels, config.sampling_points,
                               gate_bias=config.gate_bias, zero_output=identity)
        if not identity:
            gsga.offset_w = rng.standard_normal(gsga.offset_w.shape) * 0.1 / np.sqrt(c)
        arrays.update(_prefixed(f"sgda{i}.gsga", gsga.arrays()))
        arrays[f"sgda{i}.norm3"] = np.ones(c)
        arrays.update(_prefixed(f"sgda{i}.ffn", dict(
            w1=draw(c, 4 * c), b1=np.zeros(4 * c), w2=out_proj(4 * c, c), b2=np.zeros(c))))

    arrays["ild.norm"] = np.ones(c)
    decoder = DecoderParams.init(rng, c, (x, y))
    if identity and decoder.layer_w:
        decoder.layer_w[-1] = np.zeros_like(decoder.layer_w[-1])
    elif identity:
        decoder.seed_w = np.zeros_like(decoder.seed_w)
    arrays.update(_prefixed("decoder", decoder.arrays()))
    arrays.update(_prefixed("decision", DecisionParams.init(rng, c).arrays()))
    arrays["bev.w"] = draw(c, c, BEV_INIT_SCALE)
    arrays["bev.b"] = np.zeros(c)
    arrays.update(_prefixed("refine", RefineParams.init(rng, c, z, zero_output=identity).arrays()))

    ch = config.head_channels
    arrays["head.w1"] = draw(c, z * ch)
    arrays["head.b1"] = np.zeros(z * ch)
    arrays["head.w2"] = draw(ch, config.num_classes + 1)
    arrays["head.b2"] = np.zeros(config.num_classes + 1)

    params = ModelParams(arrays)
    log.debug(f"initialised {params!r} (identity={identity})")
    return params


def save_params(params: ModelParams, path) -> None:
    params.save(path)


def load_params(path) -> ModelParams:
    return ModelParams.load(path)
