"""Brute-force ground truth for small search spaces.

Enumerates every discrete per-block (op, bit-width) choice, scores each with
the exact fused objective (accuracy trained under one shared protocol,
performance/resource from one-hot weights in the cost equations, parallel
factors re-tuned per configuration) and ranks ascending.  The cost math
here is written out independently of the costmodel module on purpose: it
is the anti-drift check for the differentiable path.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import data as datamod
from .costmodel import CostHyperparams, CostModel, DeviceModel
from .search import (DerivedDesign, SGD, SearchConfig, initial_parallel_factors,
                     retune_parallel_factors)
from .supernet import SearchSpace, Supernet
from .tensorcore import NonFiniteError, Tape


class OracleError(Exception):
    pass


@dataclass(frozen=True)
class DiscreteConfig:
    op_indices: tuple
    bit_widths: tuple
    parallel_factors: tuple = None  # filled after per-config retuning


@dataclass
class RankedEntry:
    config: DiscreteConfig
    acc_loss: float
    perf_loss: float
    resource: float
    total_loss: float


@dataclass
class OracleRanking:
    entries: list  # RankedEntry, ascending total_loss
    excluded: list  # (DiscreteConfig, reason) for diverged trainings
    config_hash: str
    perf_norm: float

    def rank_of(self, op_indices, bit_widths) -> int:
        """1-based rank of a design's (ops, bits); raises if absent."""
        key = (tuple(op_indices), tuple(bit_widths))
        for pos, entry in enumerate(self.entries):
            if (entry.config.op_indices, entry.config.bit_widths) == key:
                return pos + 1
        raise OracleError(f"design {key} not present in the ranking")


def enumerate_configs(space: SearchSpace, device: DeviceModel,
                      cap: int = 4096):
    """All discrete (op, bit-width) assignments, duplicate-free.

    Per-block bit-widths for FPGA devices; one shared bit-width for GPU.
    """
    m, q, n = space.num_ops, len(space.quant), space.num_blocks
    total = (m * q) ** n if not device.shared_precision else m ** n * q
    if total > cap:
        raise OracleError(
            f"{total} configurations exceed the enumeration cap {cap}; shrink "
            f"the space or raise the cap to at least {total}")
    bits = space.quant.bit_widths
    configs = []
    if device.shared_precision:
        for ops in itertools.product(range(m), repeat=n):
            for b in bits:
                configs.append(DiscreteConfig(ops, (b,) * n))
    else:
        per_block = [(op, b) for op in range(m) for b in bits]
        for combo in itertools.product(per_block, repeat=n):
            configs.append(DiscreteConfig(tuple(c[0] for c in combo),
                                          tuple(c[1] for c in combo)))
    return configs


# -- independent cost arithmetic -------------------------------------------------

def _op_work(space: SearchSpace, i, m) -> float:
    """Multiply-count walk of one op, written out long-hand."""
    spec = space.op_spec(i, m)
    mid = spec.in_channels * spec.expansion_ratio
    work = spec.h_in * spec.w_in * spec.in_channels * mid      # 1x1 expand
    work += spec.h_in * spec.w_in * mid                        # affine+act
    work += spec.kernel_size ** 2 * spec.h_out * spec.w_out * mid  # depthwise
    work += spec.h_out * spec.w_out * mid                      # affine+act
    work += spec.h_out * spec.w_out * mid * spec.out_channels  # 1x1 project
    work += spec.h_out * spec.w_out * spec.out_channels        # affine+act
    return float(work)


def _dsp_scale(q) -> float:
    if q >= 9:
        return 1.0
    if q >= 5:
        return 0.5
    return 0.0


def exact_vertex_costs(space: SearchSpace, device: DeviceModel,
                       hyper: CostHyperparams, perf_norm: float,
                       op_indices, bit_widths, pfs):
    """(perf_loss, resource, penalty) with one-hot weights in the relaxed
    equations.

    `pfs` is per-op for the recursive accelerator, per-(block, op) for the
    pipelined one (numpy array), None for GPU.  A block's bit-width applies
    to its whole candidate row, matching the per-block quantization
    convention of the enumeration.
    """
    n = space.num_blocks
    if device.kind == "gpu_table":
        lats = [device.table.lookup(op_indices[i], bit_widths[i])
                for i in range(n)]
    else:
        lats = []
        for i in range(n):
            pf_i = (pfs[op_indices[i]] if device.kind == "fpga_recursive"
                    else pfs[i, op_indices[i]])
            lats.append(bit_widths[i] * _op_work(space, i, op_indices[i])
                        * 2.0 ** -float(pf_i))
    norm = [lat / perf_norm for lat in lats]
    if device.perf_aggregation == "lse":
        mx = max(norm)
        agg = mx + math.log(sum(math.exp(v - mx) for v in norm))
    else:
        agg = sum(norm)
    perf_loss = hyper.alpha * agg

    if device.resource_mode == "fixed":
        return perf_loss, 0.0, 0.0
    if device.resource_mode == "shared":
        resource = 0.0
        for m_idx in range(space.num_ops):
            users = [i for i in range(n) if op_indices[i] == m_idx]
            if users:
                ip_dsp = sum(_dsp_scale(bit_widths[i]) for i in users) / len(users)
                resource += math.tanh(float(len(users))) * ip_dsp \
                    * 2.0 ** float(pfs[m_idx])
    else:
        resource = sum(
            _dsp_scale(bit_widths[i]) * 2.0 ** float(pfs[i, op_indices[i]])
            for i in range(n))
    penalty = hyper.beta * hyper.base ** ((resource - device.res_ub)
                                          / hyper.res_norm)
    return perf_loss, resource, penalty


# -- accuracy protocol ------------------------------------------------------------

@dataclass
class OracleProtocol:
    """Identical training budget and seed for every enumerated config, so
    score differences come from the architecture, not the draw."""
    train_steps: int = 150
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    cap: int = 4096
    workers: int = 1
    retune_steps: int = 400
    retune_lr: float = 0.03


def _train_acc_loss(config: SearchConfig, protocol: OracleProtocol,
                    discrete: DiscreteConfig, train, val) -> float:
    net = Supernet(config.space, seed=protocol.seed,
                   shared_precision=config.device.shared_precision)
    opt = SGD(net.weight_parameters(), lr=protocol.lr,
              momentum=protocol.momentum)
    rng = np.random.default_rng(
        np.random.SeedSequence([protocol.seed, 0x0a11]))
    steps = 0
    while steps < protocol.train_steps:
        for images, labels in datamod.batches(train, protocol.batch_size, rng):
            opt.zero_grad()
            with Tape() as tape:
                loss = net.infer_loss(discrete, images, labels)
                tape.backward(loss)
            opt.step()
            steps += 1
            if steps >= protocol.train_steps:
                break
    return float(net.infer_loss(discrete, val.images, val.labels).item())


def evaluate_config_exact(config: SearchConfig, protocol: OracleProtocol,
                          discrete: DiscreteConfig, train, val,
                          perf_norm: float) -> RankedEntry:
    space, device, hyper = config.space, config.device, config.hyper
    acc_loss = _train_acc_loss(config, protocol, discrete, train, val)

    if device.kind == "gpu_table":
        tuned = DiscreteConfig(discrete.op_indices, discrete.bit_widths)
        pfs = None
    else:
        pf0 = initial_parallel_factors(device, space)
        if device.kind == "fpga_recursive":
            start = [int(round(pf0[m])) for m in discrete.op_indices]
        else:
            start = [int(round(pf0[i, m]))
                     for i, m in enumerate(discrete.op_indices)]
        seed_design = DerivedDesign(
            device_kind=device.kind,
            op_indices=list(discrete.op_indices),
            bit_widths=list(discrete.bit_widths),
            parallel_factors=start,
            shared_precision=device.shared_precision,
        )
        retuned = retune_parallel_factors(
            seed_design, space, device, hyper, perf_norm,
            steps=protocol.retune_steps, lr=protocol.retune_lr)
        tuned = DiscreteConfig(discrete.op_indices, discrete.bit_widths,
                               tuple(retuned.parallel_factors))
        if device.kind == "fpga_recursive":
            pfs = np.zeros(space.num_ops)
            for i, m in enumerate(discrete.op_indices):
                pfs[m] = retuned.parallel_factors[i]
        else:
            pfs = np.zeros((space.num_blocks, space.num_ops))
            for i, m in enumerate(discrete.op_indices):
                pfs[i, m] = retuned.parallel_factors[i]

    perf_loss, resource, penalty = exact_vertex_costs(
        space, device, hyper, perf_norm, discrete.op_indices,
        discrete.bit_widths, pfs)
    return RankedEntry(
        config=tuned,
        acc_loss=acc_loss,
        perf_loss=perf_loss,
        resource=resource,
        total_loss=acc_loss * perf_loss + penalty,
    )


def rank_configs(config: SearchConfig, protocol: OracleProtocol = None,
                 dataset=None) -> OracleRanking:
    """Exhaustive ranking of the whole discrete space, ascending loss."""
    from .search import config_hash

    protocol = protocol or OracleProtocol()
    if dataset is None:
        dataset = datamod.generate_dataset(config.data)
    train, val, _ = datamod.split(dataset, config.fractions, config.data.seed)
    configs = enumerate_configs(config.space, config.device, cap=protocol.cap)
    pf0 = initial_parallel_factors(config.device, config.space)
    cm = CostModel(config.space, config.device, config.hyper)
    perf_norm = cm.initial_perf_norm(pf0)

    def job(discrete):
        try:
            return evaluate_config_exact(config, protocol, discrete, train,
                                         val, perf_norm), None
        except NonFiniteError as exc:
            return None, (discrete, f"training diverged: {exc}")

    if protocol.workers > 1:
        with ThreadPoolExecutor(max_workers=protocol.workers) as pool:
            results = list(pool.map(job, configs))
    else:
        results = [job(c) for c in configs]

    entries, excluded = [], []
    for entry, failure in results:
        if entry is not None:
            entries.append(entry)
        else:
            excluded.append(failure)
    order = sorted(range(len(entries)),
                   key=lambda idx: (entries[idx].total_loss, idx))
    return OracleRanking(
        entries=[entries[idx] for idx in order],
        excluded=excluded,
        config_hash=config_hash(config),
        perf_norm=perf_norm,
    )
