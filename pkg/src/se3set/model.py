"""The SE3Set network: embeddings, V2E / E2V attention blocks, feed-forward and output head.

A forward pass works on a :class:`GraphBatch`, the concatenation of one or
more molecules with their hypergraphs.  Per-incidence features ``h_i^alpha``
live on the incidence list of each hypergraph; per-pair quantities on the
``(incidence, j)`` pairs with ``j`` running over the atoms of the hyperedge
(``j == i`` included, where the pair vector vanishes and only ``Y_0`` is used).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import DiffGraph, Parameter, Tensor
from .chem import Molecule
from .equi import (
    EquiLayerNorm,
    Feat,
    IrrepsLinear,
    ParamStore,
    RadialBasisSpec,
    RadialMLP,
    dtp_feat,
    dtp_paths,
    gate_feat,
    gate_input_irreps,
    radial_basis_t,
    sh_feat,
    sh_irreps,
    uniform_irreps,
)
from .fragment import OVERLAP_MODES, Hypergraph
from .o3 import Irrep, Irreps

E2V_VARIANTS = ("tensor_product", "summation")
SH_COMPONENT = math.sqrt(4.0 * math.pi)


class ModelError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    node_irreps: Irreps = field(default_factory=lambda: Irreps("16x0e+8x1o+4x2e"))
    hyperedge_irreps: Irreps = field(default_factory=lambda: Irreps("16x0e+8x1o+4x2e"))
    head_irreps: Irreps = field(default_factory=lambda: Irreps("4x0e+2x1o+1x2e"))
    ffn_irreps: Irreps = field(default_factory=lambda: Irreps("32x0e+16x1o+8x2e"))
    output_irreps: Irreps = field(default_factory=lambda: Irreps("32x0e"))
    blocks: int = 2
    heads: int = 4
    dtp_mul: int = 8
    radial: RadialBasisSpec = field(default_factory=RadialBasisSpec)
    radial_hidden: int = 64
    overlap_mode: str = "explicit"
    e2v_variant: str = "tensor_product"
    dropout: float = 0.0
    max_z: int = 54
    max_degree: int = 16

    def __post_init__(self):
        for name in ("node_irreps", "hyperedge_irreps", "head_irreps", "ffn_irreps", "output_irreps"):
            object.__setattr__(self, name, Irreps(getattr(self, name)))
            irreps = getattr(self, name)
            if len(irreps) == 0:
                raise ModelError(f"{name} must not be empty")
            if not irreps.is_simplified():
                raise ModelError(f"{name} must list each irrep once")
        if isinstance(self.radial, dict):
            object.__setattr__(self, "radial", RadialBasisSpec(**self.radial))
        if self.blocks < 1:
            raise ModelError("at least one block is required")
        if self.heads < 1 or self.dtp_mul < 1:
            raise ModelError("heads and dtp_mul must be positive")
        if self.overlap_mode not in OVERLAP_MODES:
            raise ModelError(f"unknown overlap mode {self.overlap_mode!r}")
        if self.e2v_variant not in E2V_VARIANTS:
            raise ModelError(f"unknown e2v variant {self.e2v_variant!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError("dropout must lie in [0, 1)")
        if any(ir.l > 2 for irreps in (self.node_irreps, self.hyperedge_irreps) for _, ir in irreps):
            raise ModelError("features are limited to l <= 2")
        scaled = Irreps([(mul * self.heads, ir) for mul, ir in self.head_irreps])
        for name in ("node_irreps", "hyperedge_irreps"):
            if getattr(self, name) != scaled:
                raise ModelError(f"{name} must equal heads x head_irreps = {scaled}")
        if (3 * self.dtp_mul) % self.heads:
            raise ModelError("heads must divide the attention scalar width 3 * dtp_mul")
        for _, ir in self.node_irreps:
            if ir.l == 0 and ir.p != 1:
                raise ModelError("scalar node features must be even")
        if any(ir.l != 0 or ir.p != 1 for _, ir in self.output_irreps):
            raise ModelError("output irreps must be even scalars")

    @property
    def l_max(self) -> int:
        return max(self.node_irreps.lmax, self.hyperedge_irreps.lmax)

    def to_dict(self) -> dict:
        return {
            "node_irreps": str(self.node_irreps),
            "hyperedge_irreps": str(self.hyperedge_irreps),
            "head_irreps": str(self.head_irreps),
            "ffn_irreps": str(self.ffn_irreps),
            "output_irreps": str(self.output_irreps),
            "blocks": self.blocks,
            "heads": self.heads,
            "dtp_mul": self.dtp_mul,
            "radial": self.radial.to_dict(),
            "radial_hidden": self.radial_hidden,
            "overlap_mode": self.overlap_mode,
            "e2v_variant": self.e2v_variant,
            "dropout": self.dropout,
            "max_z": self.max_z,
            "max_degree": self.max_degree,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(data) - allowed
        if unknown:
            raise ModelError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


# --------------------------------------------------------------------------
# batching
# --------------------------------------------------------------------------


@dataclass
class GraphBatch:
    """Index arrays describing a concatenation of molecules and hypergraphs."""

    numbers: np.ndarray  # (N,)
    positions: np.ndarray  # (N, 3)
    mol_index: np.ndarray  # (N,) molecule id per atom
    n_mols: int
    degree: np.ndarray  # (N,) incidence count per atom
    inc_node: np.ndarray  # (I,) atom of each incidence
    inc_size: np.ndarray  # (I,) atoms in the incidence's hyperedge
    pair_inc: np.ndarray  # (P,) incidence of each pair
    pair_i: np.ndarray  # (P,)
    pair_j: np.ndarray  # (P,)
    atom_counts: np.ndarray  # (n_mols,)
    mode: str = "explicit"

    @property
    def n_atoms(self) -> int:
        return len(self.numbers)

    @property
    def n_incidences(self) -> int:
        return len(self.inc_node)

    @property
    def self_mask(self) -> np.ndarray:
        return self.pair_i == self.pair_j


def make_batch(items: Sequence[tuple[Molecule, Hypergraph]], positions: Sequence[np.ndarray] | None = None) -> GraphBatch:
    numbers, pos, mol_index, degree = [], [], [], []
    inc_node, inc_size, pair_inc, pair_i, pair_j, counts = [], [], [], [], [], []
    offset = 0
    n_inc = 0
    modes = {hg.mode for _, hg in items}
    if len(modes) > 1:
        raise ModelError("a batch cannot mix explicit and implicit hypergraphs")
    for k, (mol, hg) in enumerate(items):
        if hg.n != mol.n_atoms:
            raise ModelError(f"hypergraph for {hg.n} atoms given for a molecule of {mol.n_atoms}")
        node_edges = hg.node_edges()
        for i, edges in enumerate(node_edges):
            if not edges:
                raise ModelError(f"atom {i} of molecule {k} has no incident hyperedge")
        numbers.append(mol.numbers)
        pos.append(mol.positions if positions is None else np.asarray(positions[k], dtype=np.float64))
        mol_index.append(np.full(mol.n_atoms, k))
        degree.append([len(e) for e in node_edges])
        counts.append(mol.n_atoms)
        for i, a in hg.incidences():
            edge = hg.hyperedges[a]
            inc_node.append(offset + i)
            inc_size.append(len(edge))
            for j in edge:
                pair_inc.append(n_inc)
                pair_i.append(offset + i)
                pair_j.append(offset + j)
            n_inc += 1
        offset += mol.n_atoms
    as_int = lambda x: np.asarray(x, dtype=np.int64)
    return GraphBatch(
        numbers=as_int(np.concatenate(numbers)),
        positions=np.concatenate(pos).astype(np.float64),
        mol_index=as_int(np.concatenate(mol_index)),
        n_mols=len(items),
        degree=as_int(np.concatenate(degree)),
        inc_node=as_int(inc_node),
        inc_size=as_int(inc_size),
        pair_inc=as_int(pair_inc),
        pair_i=as_int(pair_i),
        pair_j=as_int(pair_j),
        atom_counts=as_int(counts),
        mode=modes.pop() if modes else "explicit",
    )


# --------------------------------------------------------------------------
# network pieces
# --------------------------------------------------------------------------


def _scalar_irreps(mul: int) -> Irreps:
    return Irreps([(mul, 0, 1)])


def _attention_logits(f0: Tensor, a: Parameter, heads: int) -> Tensor:
    """``a_h . LeakyReLU(f_l=0)`` per head; ``f0`` is ``(P, C)`` and ``a`` is ``(heads, C / heads)``."""
    P, C = f0.shape
    z = ag.leaky_relu(ag.reshape(f0, (P, heads, C // heads)))
    return ag.einsum("phc,hc->ph", z, a)


def _weighted_sum(v: Feat, attn: Tensor, seg: np.ndarray, n_seg: int, heads: int) -> Feat:
    """``sum_j a_j v_j`` per segment, each head weighting its own slice of channels."""
    blocks = []
    for b, (mul, ir) in zip(v.blocks, v.irreps):
        P = b.shape[0]
        split = ag.reshape(b, (P, heads, mul // heads, ir.dim))
        weighted = split * ag.reshape(attn, (P, heads, 1, 1))
        blocks.append(ag.segment_sum(ag.reshape(weighted, (P, mul, ir.dim)), seg, n_seg))
    return Feat(v.irreps, blocks)


class V2E:
    def __init__(self, store: ParamStore, name: str, cfg: ModelConfig):
        m, lm = cfg.dtp_mul, cfg.l_max
        self.cfg = cfg
        self.U = uniform_irreps(m, lm)
        self.Y = sh_irreps(lm)
        self.F = gate_input_irreps(self.U)
        n_paths = len(dtp_paths(self.U, self.Y, self.U))
        self.norm = EquiLayerNorm(store, f"{name}.norm", cfg.node_irreps)
        self.lin_i = IrrepsLinear(store, f"{name}.lin_i", cfg.node_irreps, self.U)
        self.lin_j = IrrepsLinear(store, f"{name}.lin_j", cfg.node_irreps, self.U, bias=False)
        self.rad_f = RadialMLP(store, f"{name}.rad_f", cfg.radial.count, n_paths, cfg.radial_hidden)
        self.lin_f = IrrepsLinear(store, f"{name}.lin_f", self.U, self.F)
        self.attn = store.new(f"{name}.attn", (cfg.heads, self.F[0][0] // cfg.heads), "fan_in")
        self.rad_v = RadialMLP(store, f"{name}.rad_v", cfg.radial.count, n_paths, cfg.radial_hidden)
        self.lin_v = IrrepsLinear(store, f"{name}.lin_v", self.U, cfg.hyperedge_irreps)
        self.lin_out = IrrepsLinear(store, f"{name}.lin_out", cfg.hyperedge_irreps, cfg.hyperedge_irreps)

    def __call__(self, x: Feat, geo: "PairGeometry", batch: GraphBatch, ctx: "ForwardContext") -> Feat:
        xn = self.norm(x)
        t = self.lin_i(xn).gather(batch.pair_i) + self.lin_j(xn).gather(batch.pair_j)
        f = self.lin_f(dtp_feat(t, geo.sh, self.rad_f(geo.rbf), self.U))
        logits = _attention_logits(f.scalars(), self.attn, self.cfg.heads)
        attn = ctx.dropout(ag.segment_softmax(logits, batch.pair_inc, batch.n_incidences))
        v = self.lin_v(dtp_feat(gate_feat(f), geo.sh, self.rad_v(geo.rbf), self.U))
        return self.lin_out(_weighted_sum(v, attn, batch.pair_inc, batch.n_incidences, self.cfg.heads))


class E2V:
    def __init__(self, store: ParamStore, name: str, cfg: ModelConfig):
        m, lm = cfg.dtp_mul, cfg.l_max
        self.cfg = cfg
        self.U = uniform_irreps(m, lm)
        self.F = gate_input_irreps(self.U)
        self.norm_x = EquiLayerNorm(store, f"{name}.norm_x", cfg.node_irreps)
        self.norm_h = EquiLayerNorm(store, f"{name}.norm_h", cfg.hyperedge_irreps)
        self.lin_x = IrrepsLinear(store, f"{name}.lin_x", cfg.node_irreps, self.U)
        if cfg.e2v_variant == "tensor_product":
            n_paths = len(dtp_paths(self.U, self.U, self.U))
            self.lin_h = IrrepsLinear(store, f"{name}.lin_h", cfg.hyperedge_irreps, self.U)
            self.w_f = store.new(f"{name}.w_f", (n_paths,), "const", 1.0 / math.sqrt(n_paths))
            self.w_v = store.new(f"{name}.w_v", (n_paths,), "const", 1.0 / math.sqrt(n_paths))
            self.lin_f = IrrepsLinear(store, f"{name}.lin_f", self.U, self.F)
            self.lin_v = IrrepsLinear(store, f"{name}.lin_v", self.U, cfg.node_irreps)
        else:
            self.lin_h = IrrepsLinear(store, f"{name}.lin_h", cfg.hyperedge_irreps, self.U, bias=False)
            self.lin_f = IrrepsLinear(store, f"{name}.lin_f", self.U, self.F)
            self.lin_v = IrrepsLinear(store, f"{name}.lin_v", self.U, cfg.node_irreps)
        self.attn = store.new(f"{name}.attn", (cfg.heads, self.F[0][0] // cfg.heads), "fan_in")
        self.lin_out = IrrepsLinear(store, f"{name}.lin_out", cfg.node_irreps, cfg.node_irreps)

    def __call__(self, x: Feat, h: Feat, batch: GraphBatch, ctx: "ForwardContext") -> Feat:
        xi = self.lin_x(self.norm_x(x)).gather(batch.inc_node)
        hu = self.lin_h(self.norm_h(h))
        if self.cfg.e2v_variant == "tensor_product":
            f = self.lin_f(dtp_feat(xi, hu, self.w_f, self.U))
            v = self.lin_v(dtp_feat(gate_feat(f), hu, self.w_v, self.U))
        else:
            f = self.lin_f(xi + hu)
            v = self.lin_v(gate_feat(f))
        logits = _attention_logits(f.scalars(), self.attn, self.cfg.heads)
        attn = ctx.dropout(ag.segment_softmax(logits, batch.inc_node, batch.n_atoms))
        return self.lin_out(_weighted_sum(v, attn, batch.inc_node, batch.n_atoms, self.cfg.heads))


class FeedForward:
    def __init__(self, store: ParamStore, name: str, cfg: ModelConfig):
        self.norm = EquiLayerNorm(store, f"{name}.norm", cfg.node_irreps)
        self.lin_in = IrrepsLinear(store, f"{name}.lin_in", cfg.node_irreps, gate_input_irreps(cfg.ffn_irreps))
        self.lin_out = IrrepsLinear(store, f"{name}.lin_out", cfg.ffn_irreps, cfg.node_irreps)

    def __call__(self, x: Feat) -> Feat:
        return self.lin_out(gate_feat(self.lin_in(self.norm(x))))


@dataclass
class PairGeometry:
    sh: Feat
    rbf: Tensor


@dataclass
class ForwardContext:
    rate: float = 0.0
    rng: np.random.Generator | None = None

    def dropout(self, t: Tensor) -> Tensor:
        if self.rate <= 0 or self.rng is None:
            return t
        keep = (self.rng.random(t.shape) >= self.rate) / (1.0 - self.rate)
        return t * keep


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------


class SE3Set:
    """Parameters plus forward pass of the hypergraph attention network.

    ``energy_shift`` (per element) and ``energy_scale`` map the raw network
    output to energies: ``E = scale * raw + sum_i shift[z_i]``.
    """

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        self.cfg = cfg = cfg or ModelConfig()
        store = ParamStore(np.random.Generator(np.random.Philox(seed)))
        self.store = store
        s0 = cfg.node_irreps[0][0] if cfg.node_irreps[0][1] == Irrep(0, 1) else 0
        if s0 == 0:
            raise ModelError("node irreps need a leading 0e block")
        h0 = cfg.hyperedge_irreps[0][0] if cfg.hyperedge_irreps[0][1] == Irrep(0, 1) else 0
        if h0 == 0:
            raise ModelError("hyperedge irreps need a leading 0e block")
        self.emb_z = store.new("embed.z", (cfg.max_z + 1, s0), "embedding")
        self.emb_deg = store.new("embed.degree", (cfg.max_degree + 1, s0), "embedding")
        self.emb_hz = store.new("embed.edge_z", (cfg.max_z + 1, h0), "embedding")
        self.lin_h0 = IrrepsLinear(store, "embed.edge_lin", _scalar_irreps(h0), cfg.hyperedge_irreps)
        self.layers = []
        for b in range(cfg.blocks):
            self.layers.append(
                (V2E(store, f"block{b}.v2e", cfg), E2V(store, f"block{b}.e2v", cfg), FeedForward(store, f"block{b}.ffn", cfg))
            )
        n_out = cfg.output_irreps[0][0]
        self.head_norm = EquiLayerNorm(store, "head.norm", cfg.node_irreps)
        self.head_lin = IrrepsLinear(store, "head.lin", cfg.node_irreps, cfg.output_irreps)
        self.out_w = store.new("head.out_w", (n_out, 1), "fan_in")
        self.out_b = store.new("head.out_b", (1,), "const")
        self.energy_shift = np.zeros(cfg.max_z + 1)
        self.energy_scale = 1.0

    @property
    def params(self) -> dict[str, Parameter]:
        return self.store.params

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- forward pieces ----------------------------------------------------

    def embed(self, batch: GraphBatch) -> tuple[Feat, Feat]:
        cfg = self.cfg
        if batch.numbers.max(initial=0) > cfg.max_z or batch.numbers.min(initial=1) < 1:
            raise ModelError(f"atomic number outside the embedding table (1..{cfg.max_z})")
        if batch.mode != cfg.overlap_mode:
            raise ModelError(f"model expects {cfg.overlap_mode} hypergraphs, got {batch.mode}")
        N, I = batch.n_atoms, batch.n_incidences
        deg = np.minimum(batch.degree, cfg.max_degree)
        x0 = ag.gather(self.emb_z, batch.numbers) + ag.gather(self.emb_deg, deg)
        blocks = [ag.reshape(x0, (N, x0.shape[1], 1))]
        blocks += [Tensor(np.zeros((N, mul, ir.dim))) for mul, ir in cfg.node_irreps[1:]]
        x = Feat(cfg.node_irreps, blocks)
        zj = ag.gather(self.emb_hz, batch.numbers[batch.pair_j])
        mean = ag.segment_sum(zj, batch.pair_inc, I) / batch.inc_size[:, None].astype(np.float64)
        h = self.lin_h0(Feat(_scalar_irreps(mean.shape[1]), [ag.reshape(mean, (I, mean.shape[1], 1))]))
        return x, h

    def geometry(self, pos: Tensor, batch: GraphBatch) -> PairGeometry:
        r = ag.gather(pos, batch.pair_j) - ag.gather(pos, batch.pair_i)
        mask = batch.self_mask
        d = ag.norm(r, axis=1)
        rbf = radial_basis_t(d, self.cfg.radial, allow_zero=True)
        sh = sh_feat(r, self.cfg.l_max, mask)
        # component normalisation (|Y_l|^2 = 2l+1) keeps tensor-product outputs at unit scale
        sh = Feat(sh.irreps, [ag.scale(b, SH_COMPONENT) for b in sh.blocks])
        return PairGeometry(sh, rbf)

    def features(self, pos: Tensor, batch: GraphBatch, ctx: ForwardContext | None = None, trace: list | None = None) -> Feat:
        """Node features after all blocks; ``trace`` collects ``(x, h)`` after each block."""
        ctx = ctx or ForwardContext()
        x, h = self.embed(batch)
        geo = self.geometry(pos, batch)
        for v2e, e2v, ffn in self.layers:
            h = h + v2e(x, geo, batch, ctx)
            x = x + e2v(x, h, batch, ctx)
            x = x + ffn(x)
            if trace is not None:
                trace.append((x, h))
        return x

    def raw_energy(self, pos: Tensor, batch: GraphBatch, ctx: ForwardContext | None = None) -> Tensor:
        """Per-molecule network output before shift and scale, shape ``(n_mols,)``."""
        x = self.features(pos, batch, ctx)
        s = ag.silu(self.head_lin(self.head_norm(x)).scalars())
        pooled = ag.segment_sum(s, batch.mol_index, batch.n_mols)
        return ag.reshape(ag.linear(pooled, self.out_w, self.out_b), (batch.n_mols,))

    def shift(self, batch: GraphBatch) -> np.ndarray:
        out = np.zeros(batch.n_mols)
        np.add.at(out, batch.mol_index, self.energy_shift[batch.numbers])
        return out

    # -- user API -----------------------------------------------------------

    def energy(self, batch: GraphBatch) -> np.ndarray:
        raw = self.raw_energy(Tensor(batch.positions), batch)
        return self.energy_scale * raw.data + self.shift(batch)

    def energy_and_forces(self, batch: GraphBatch) -> tuple[np.ndarray, np.ndarray]:
        """Energies ``(n_mols,)`` and forces ``(N, 3)`` as the negative position gradient."""
        pos = Tensor(batch.positions.copy(), requires_grad=True, name="positions")
        with DiffGraph() as g:
            raw = self.raw_energy(pos, batch)
            total = ag.tsum(raw)
        (grad,) = g.backward(total, [pos])
        return self.energy_scale * raw.data + self.shift(batch), -self.energy_scale * grad


def predict_energy_forces(model: SE3Set, mol: Molecule, hg: Hypergraph) -> tuple[float, np.ndarray]:
    E, F = model.energy_and_forces(make_batch([(mol, hg)]))
    return float(E[0]), F


def energy_force_loss(
    E_pred, E_true, F_pred=None, F_true=None, lambda_e: float = 1.0, lambda_f: float = 100.0
) -> float:
    """``lambda_e |dE| + lambda_f mean|dF|`` averaged over molecules."""
    E_pred, E_true = np.atleast_1d(np.asarray(E_pred, float)), np.atleast_1d(np.asarray(E_true, float))
    if E_pred.shape != E_true.shape:
        raise ValueError(f"energy shapes differ: {E_pred.shape} vs {E_true.shape}")
    loss = lambda_e * float(np.mean(np.abs(E_pred - E_true)))
    if lambda_f:
        if F_pred is None or F_true is None:
            raise ValueError("forces are required when lambda_f is non-zero")
        F_pred, F_true = np.asarray(F_pred, float), np.asarray(F_true, float)
        if F_pred.shape != F_true.shape:
            raise ValueError(f"force shapes differ: {F_pred.shape} vs {F_true.shape}")
        loss += lambda_f * float(np.mean(np.abs(F_pred - F_true)))
    return loss
