"""Internal: compiles a reaction network plus bound rates into flat numpy
arrays and numba kernels.

Rate bodies are constant-folded where possible (the common case: predefined
laws whose arguments involve only parameters and constant location sizes);
anything state- or time-dependent is emitted as a tiny stack program that the
kernels interpret.  Nothing in this module is part of the public API.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .kinetics import RateFunction
from .model import (
    BinaryOp, LocationSizeRef, MassAction, MichaelisMenten, Name, Negate,
    Number, ParameterRef, SpeciesRef, TimeRef,
)

# stack-program opcodes
OP_CONST = 0
OP_STATE = 1   # push max(0, state[arg])
OP_TIME = 2
OP_ADD = 3
OP_SUB = 4
OP_MUL = 5
OP_DIV = 6
OP_NEG = 7
OP_CHECKPOS = 8  # top of stack must be > 0 (time-dependent location sizes)

LAW_MA = 0
LAW_MM = 1
LAW_CUSTOM = 2

# kernel error codes
ERR_NONE = 0
ERR_DIV_ZERO = 1
ERR_NEGATIVE_PROPENSITY = 2
ERR_NONPOSITIVE_SIZE = 3
ERR_OVERFLOW = 4


@dataclass
class CompiledNetwork:
    n_species: int
    n_reactions: int
    net: tuple  # the flat array bundle passed to kernels
    max_stack: int

    def stack(self) -> np.ndarray:
        return np.empty(self.max_stack, dtype=np.float64)


class _Emitter:
    def __init__(self, binding):
        self.binding = binding
        self.ops: list[int] = []
        self.args: list[int] = []
        self.consts: list[float] = []
        self.depth = 0
        self.max_depth = 0

    def _push(self, op, arg=0):
        self.ops.append(op)
        self.args.append(arg)
        if op in (OP_CONST, OP_STATE, OP_TIME):
            self.depth += 1
            self.max_depth = max(self.max_depth, self.depth)
        elif op in (OP_ADD, OP_SUB, OP_MUL, OP_DIV):
            self.depth -= 1

    def const(self, value):
        self.consts.append(float(value))
        self._push(OP_CONST, len(self.consts) - 1)

    def emit(self, expr):
        binding = self.binding
        if isinstance(expr, Number):
            self.const(expr.value)
        elif isinstance(expr, (ParameterRef, Name)):
            name = expr.name
            if name in binding.parameters:
                self.const(binding.parameters[name])
            elif isinstance(expr, Name) and name in binding.location_sizes:
                self._emit_size(name)
            elif isinstance(expr, Name) and name == "t":
                self._push(OP_TIME)
            else:
                raise KeyError(name)
        elif isinstance(expr, SpeciesRef):
            index = binding.species_index[(expr.species, expr.location)]
            self._push(OP_STATE, index)
        elif isinstance(expr, LocationSizeRef):
            self._emit_size(expr.location)
        elif isinstance(expr, TimeRef):
            self._push(OP_TIME)
        elif isinstance(expr, Negate):
            self.emit(expr.operand)
            self._push(OP_NEG)
        elif isinstance(expr, BinaryOp):
            self.emit(expr.left)
            self.emit(expr.right)
            self._push({"+": OP_ADD, "-": OP_SUB,
                        "*": OP_MUL, "/": OP_DIV}[expr.op])
        else:
            raise TypeError(f"cannot compile expression node {expr!r}")

    def _emit_size(self, name):
        size = self.binding.location_sizes[name]
        if callable(size):
            # time-dependent: inline the size expression and re-check
            # positivity at evaluation time
            self.emit(self.binding.size_expressions[name])
            self._push(OP_CHECKPOS)
        else:
            self.const(size)


def _fold_constant(expr, binding):
    """Value of ``expr`` when it reads neither state nor time, else None."""
    if isinstance(expr, Number):
        return expr.value
    if isinstance(expr, (ParameterRef, Name)):
        name = expr.name
        if name in binding.parameters:
            return binding.parameters[name]
        if isinstance(expr, Name) and name in binding.location_sizes:
            size = binding.location_sizes[name]
            return None if callable(size) else size
        return None
    if isinstance(expr, LocationSizeRef):
        size = binding.location_sizes[expr.location]
        return None if callable(size) else size
    if isinstance(expr, Negate):
        inner = _fold_constant(expr.operand, binding)
        return None if inner is None else -inner
    if isinstance(expr, BinaryOp):
        left = _fold_constant(expr.left, binding)
        right = _fold_constant(expr.right, binding)
        if left is None or right is None:
            return None
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        return left / right if right != 0.0 else None
    return None


def compile_network(network, rates: list[RateFunction]) -> CompiledNetwork:
    n_reactions = len(network.reactions)
    n_species = len(network.species_index)
    if n_reactions != len(rates):
        raise ValueError("one bound rate per reaction is required")

    law_kind = np.zeros(n_reactions, dtype=np.int8)
    ma_rate = np.zeros(n_reactions, dtype=np.float64)
    mm_vm = np.zeros(n_reactions, dtype=np.float64)
    mm_km = np.zeros(n_reactions, dtype=np.float64)
    mm_s = np.zeros(n_reactions, dtype=np.int32)
    mm_e = np.zeros(n_reactions, dtype=np.int32)
    react_off = np.zeros(n_reactions + 1, dtype=np.int32)
    react_idx: list[int] = []
    react_stoich: list[int] = []
    ea_off = np.zeros(n_reactions, dtype=np.int32)
    ea_len = np.zeros(n_reactions, dtype=np.int32)
    eb_off = np.zeros(n_reactions, dtype=np.int32)
    eb_len = np.zeros(n_reactions, dtype=np.int32)

    ops: list[int] = []
    args: list[int] = []
    consts: list[float] = []
    max_stack = 4

    def emit_expr(expr, binding):
        nonlocal max_stack
        em = _Emitter(binding)
        em.emit(expr)
        off = len(ops)
        const_base = len(consts)
        ops.extend(em.ops)
        for i, arg in enumerate(em.args):
            args.append(arg + const_base if em.ops[i] == OP_CONST else arg)
        consts.extend(em.consts)
        max_stack = max(max_stack, em.max_depth + 1)
        return off, len(em.ops)

    for j, (reaction, rate) in enumerate(zip(network.reactions, rates)):
        binding = rate.binding
        body = rate.law.body
        if isinstance(body, MassAction):
            law_kind[j] = LAW_MA
            value = _fold_constant(body.rate, binding)
            if value is not None:
                ma_rate[j] = value
            else:
                ea_off[j], ea_len[j] = emit_expr(body.rate, binding)
            for species, location, stoich in reaction.reactants:
                react_idx.append(binding.species_index[(species, location)])
                react_stoich.append(stoich)
        elif isinstance(body, MichaelisMenten):
            law_kind[j] = LAW_MM
            mm_s[j] = binding.species_index[reaction.reactants[0][:2]]
            mm_e[j] = binding.species_index[reaction.activators[0]]
            value = _fold_constant(body.vmax, binding)
            if value is not None:
                mm_vm[j] = value
            else:
                ea_off[j], ea_len[j] = emit_expr(body.vmax, binding)
            value = _fold_constant(body.km, binding)
            if value is not None:
                mm_km[j] = value
            else:
                eb_off[j], eb_len[j] = emit_expr(body.km, binding)
        else:
            law_kind[j] = LAW_CUSTOM
            ea_off[j], ea_len[j] = emit_expr(body.body, binding)
        react_off[j + 1] = len(react_idx)

    upd_off = np.zeros(n_reactions + 1, dtype=np.int32)
    upd_idx: list[int] = []
    upd_delta: list[int] = []
    for j in range(n_reactions):
        row = network.stoichiometry[j]
        for i in np.nonzero(row)[0]:
            upd_idx.append(int(i))
            upd_delta.append(int(row[i]))
        upd_off[j + 1] = len(upd_idx)

    dep_lists = reaction_dependencies(network, rates)
    dep_off = np.zeros(n_reactions + 1, dtype=np.int32)
    dep_idx: list[int] = []
    for j in range(n_reactions):
        dep_idx.extend(dep_lists[j])
        dep_off[j + 1] = len(dep_idx)

    net = (law_kind, ma_rate,
           react_off, np.array(react_idx, dtype=np.int32),
           np.array(react_stoich, dtype=np.int64),
           mm_vm, mm_km, mm_s, mm_e,
           ea_off, ea_len, eb_off, eb_len,
           np.array(ops, dtype=np.int8), np.array(args, dtype=np.int32),
           np.array(consts, dtype=np.float64),
           upd_off, np.array(upd_idx, dtype=np.int32),
           np.array(upd_delta, dtype=np.int64),
           dep_off, np.array(dep_idx, dtype=np.int32))
    return CompiledNetwork(n_species=n_species, n_reactions=n_reactions,
                           net=net, max_stack=max_stack)


def reaction_dependencies(network, rates) -> list[list[int]]:
    """dependents[k] = reactions whose rate reads a species changed by k
    (k itself excluded)."""
    n = len(network.reactions)
    changes = [set(np.nonzero(network.stoichiometry[j])[0].tolist())
               for j in range(n)]
    reads = [set(rate.reads) for rate in rates]
    return [[j for j in range(n)
             if j != k and reads[j] & changes[k]]
            for k in range(n)]


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------
# The propensity sweep takes its arrays as separate arguments: calling a
# function with the whole bundle per *reaction* costs two orders of magnitude
# more than the arithmetic itself, so kernels unpack the bundle once and pay
# one call per event.

@njit(cache=True, nogil=True)
def _rpn_eval(ops, args, consts, off, length, x, t, stack):
    top = -1
    for k in range(off, off + length):
        op = ops[k]
        if op == OP_CONST:
            top += 1
            stack[top] = consts[args[k]]
        elif op == OP_STATE:
            value = x[args[k]]
            if value < 0.0:
                value = 0.0
            top += 1
            stack[top] = value
        elif op == OP_TIME:
            top += 1
            stack[top] = t
        elif op == OP_ADD:
            stack[top - 1] = stack[top - 1] + stack[top]
            top -= 1
        elif op == OP_SUB:
            stack[top - 1] = stack[top - 1] - stack[top]
            top -= 1
        elif op == OP_MUL:
            stack[top - 1] = stack[top - 1] * stack[top]
            top -= 1
        elif op == OP_DIV:
            if stack[top] == 0.0:
                return 0.0, ERR_DIV_ZERO
            stack[top - 1] = stack[top - 1] / stack[top]
            top -= 1
        elif op == OP_NEG:
            stack[top] = -stack[top]
        else:  # OP_CHECKPOS
            if stack[top] <= 0.0:
                return 0.0, ERR_NONPOSITIVE_SIZE
    return stack[0], ERR_NONE


@njit(cache=True, nogil=True)
def _propensity_one(j, x, t, law_kind, ma_rate, react_off, react_idx,
                    react_stoich, mm_vm, mm_km, mm_s, mm_e,
                    ea_off, ea_len, eb_off, eb_len, ops, args, consts,
                    stack):
    kind = law_kind[j]
    if kind == LAW_MA:
        if ea_len[j] == 0:
            rate = ma_rate[j]
        else:
            rate, err = _rpn_eval(ops, args, consts, ea_off[j], ea_len[j],
                                  x, t, stack)
            if err != ERR_NONE:
                return 0.0, err
        for k in range(react_off[j], react_off[j + 1]):
            count = x[react_idx[k]]
            if count < 0.0:
                count = 0.0
            for _ in range(react_stoich[k]):
                rate *= count
        return rate, ERR_NONE
    if kind == LAW_MM:
        if ea_len[j] == 0:
            vm = mm_vm[j]
        else:
            vm, err = _rpn_eval(ops, args, consts, ea_off[j], ea_len[j],
                                x, t, stack)
            if err != ERR_NONE:
                return 0.0, err
        if eb_len[j] == 0:
            km = mm_km[j]
        else:
            km, err = _rpn_eval(ops, args, consts, eb_off[j], eb_len[j],
                                x, t, stack)
            if err != ERR_NONE:
                return 0.0, err
        substrate = x[mm_s[j]]
        if substrate < 0.0:
            substrate = 0.0
        enzyme = x[mm_e[j]]
        if enzyme < 0.0:
            enzyme = 0.0
        denom = km + substrate
        if denom == 0.0:
            return 0.0, ERR_DIV_ZERO
        return vm * enzyme * substrate / denom, ERR_NONE
    return _rpn_eval(ops, args, consts, ea_off[j], ea_len[j], x, t, stack)


@njit(cache=True, nogil=True)
def _sweep(x, t, law_kind, ma_rate, react_off, react_idx, react_stoich,
           mm_vm, mm_km, mm_s, mm_e, ea_off, ea_len, eb_off, eb_len,
           ops, args, consts, a, stack):
    """All propensities into ``a``; returns (total, err, bad_reaction)."""
    total = 0.0
    for j in range(a.shape[0]):
        kind = law_kind[j]
        if kind == LAW_MA and ea_len[j] == 0:
            rate = ma_rate[j]
            for k in range(react_off[j], react_off[j + 1]):
                count = x[react_idx[k]]
                if count < 0.0:
                    count = 0.0
                for _ in range(react_stoich[k]):
                    rate *= count
            a[j] = rate
        elif kind == LAW_MM and ea_len[j] == 0 and eb_len[j] == 0:
            substrate = x[mm_s[j]]
            if substrate < 0.0:
                substrate = 0.0
            enzyme = x[mm_e[j]]
            if enzyme < 0.0:
                enzyme = 0.0
            denom = mm_km[j] + substrate
            if denom == 0.0:
                return 0.0, ERR_DIV_ZERO, j
            a[j] = mm_vm[j] * enzyme * substrate / denom
        else:
            value, err = _propensity_one(
                j, x, t, law_kind, ma_rate, react_off, react_idx,
                react_stoich, mm_vm, mm_km, mm_s, mm_e, ea_off, ea_len,
                eb_off, eb_len, ops, args, consts, stack)
            if err != ERR_NONE:
                return 0.0, err, j
            a[j] = value
        total += a[j]
    return total, ERR_NONE, -1


@njit(cache=True, nogil=True)
def _propensity(j, x, t, net, stack):
    (law_kind, ma_rate, react_off, react_idx, react_stoich,
     mm_vm, mm_km, mm_s, mm_e, ea_off, ea_len, eb_off, eb_len,
     ops, args, consts, upd_off, upd_idx, upd_delta, dep_off, dep_idx) = net
    return _propensity_one(j, x, t, law_kind, ma_rate, react_off, react_idx,
                           react_stoich, mm_vm, mm_km, mm_s, mm_e,
                           ea_off, ea_len, eb_off, eb_len, ops, args, consts,
                           stack)


@njit(cache=True, nogil=True)
def _all_propensities(x, t, net, a, stack):
    (law_kind, ma_rate, react_off, react_idx, react_stoich,
     mm_vm, mm_km, mm_s, mm_e, ea_off, ea_len, eb_off, eb_len,
     ops, args, consts, upd_off, upd_idx, upd_delta, dep_off, dep_idx) = net
    return _sweep(x, t, law_kind, ma_rate, react_off, react_idx,
                  react_stoich, mm_vm, mm_km, mm_s, mm_e, ea_off, ea_len,
                  eb_off, eb_len, ops, args, consts, a, stack)


@njit(cache=True, nogil=True)
def _rhs(x, t, net, out, a, stack):
    (law_kind, ma_rate, react_off, react_idx, react_stoich,
     mm_vm, mm_km, mm_s, mm_e, ea_off, ea_len, eb_off, eb_len,
     ops, args, consts, upd_off, upd_idx, upd_delta, dep_off, dep_idx) = net
    total, err, bad = _sweep(x, t, law_kind, ma_rate, react_off, react_idx,
                             react_stoich, mm_vm, mm_km, mm_s, mm_e,
                             ea_off, ea_len, eb_off, eb_len, ops, args,
                             consts, a, stack)
    if err != ERR_NONE:
        return err, bad
    for i in range(out.shape[0]):
        out[i] = 0.0
    for j in range(a.shape[0]):
        value = a[j]
        for k in range(upd_off[j], upd_off[j + 1]):
            out[upd_idx[k]] += upd_delta[k] * value
    return ERR_NONE, -1


@njit(cache=True, nogil=True)
def _run_rk4(x, t0, t_end, h, grid, out, net, a, stack):
    """Classical RK4 over [t0, t_end] with linear resampling onto ``grid``;
    mirrors the generic integrator in odesim exactly."""
    n = x.shape[0]
    k1 = np.empty(n, dtype=np.float64)
    k2 = np.empty(n, dtype=np.float64)
    k3 = np.empty(n, dtype=np.float64)
    k4 = np.empty(n, dtype=np.float64)
    xs = np.empty(n, dtype=np.float64)
    x_next = np.empty(n, dtype=np.float64)

    g = 0
    while g < grid.shape[0] and grid[g] <= t0:
        out[g, :] = x
        g += 1

    n_full = int(np.floor((t_end - t0) / h + 1e-9))
    t = t0
    step_index = 0
    t_eps = 1e-15 * max(1.0, abs(t_end))
    while t < t_end - t_eps:
        if step_index < n_full:
            step = h
            t_next = t0 + (step_index + 1) * h
        else:
            t_next = t_end
            step = t_end - t
        if step <= 0.0:
            break
        err, bad = _rhs(x, t, net, k1, a, stack)
        if err != ERR_NONE:
            return err, bad
        for i in range(n):
            xs[i] = x[i] + (0.5 * step) * k1[i]
        err, bad = _rhs(xs, t + 0.5 * step, net, k2, a, stack)
        if err != ERR_NONE:
            return err, bad
        for i in range(n):
            xs[i] = x[i] + (0.5 * step) * k2[i]
        err, bad = _rhs(xs, t + 0.5 * step, net, k3, a, stack)
        if err != ERR_NONE:
            return err, bad
        for i in range(n):
            xs[i] = x[i] + step * k3[i]
        err, bad = _rhs(xs, t + step, net, k4, a, stack)
        if err != ERR_NONE:
            return err, bad
        for i in range(n):
            acc = ((k1[i] + 2.0 * k2[i]) + 2.0 * k3[i]) + k4[i]
            x_next[i] = x[i] + (step / 6.0) * acc
            if not np.isfinite(x_next[i]) or abs(x_next[i]) > 1e300:
                return ERR_OVERFLOW, -1
        while g < grid.shape[0] and grid[g] <= t_next:
            w = (grid[g] - t) / step
            for i in range(n):
                out[g, i] = x[i] + w * (x_next[i] - x[i])
            g += 1
        for i in range(n):
            x[i] = x_next[i]
        t = t_next
        step_index += 1
    while g < grid.shape[0]:
        out[g, :] = x
        g += 1
    return ERR_NONE, -1


# -- pseudo-random generation ------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MASK64 = (1 << 64) - 1


def splitmix_mix(z: int) -> int:
    """Finalising mix of splitmix-style generators (pure Python, mod 2^64)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1F4EE2B5) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_stream_state(master_seed: int, run_index: int) -> np.ndarray:
    """Initial xoshiro256** state for substream ``run_index`` of a master
    seed: splitmix-style expansion of the (seed, index) pair."""
    golden = int(_GOLDEN)
    base = splitmix_mix((master_seed & _MASK64)
                        ^ splitmix_mix((run_index * golden + golden)
                                       & _MASK64))
    words = [splitmix_mix((base + (i + 1) * golden) & _MASK64)
             for i in range(4)]
    if not any(words):
        words[0] = golden
    return np.array(words, dtype=np.uint64)


@njit(cache=True, nogil=True)
def _next_u64(s):
    s1 = s[1]
    result = np.uint64(np.uint64(
        (s1 * np.uint64(5)) << np.uint64(7)
        | (s1 * np.uint64(5)) >> np.uint64(57)) * np.uint64(9))
    t = s1 << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = (s[3] << np.uint64(45)) | (s[3] >> np.uint64(19))
    return result


@njit(cache=True, nogil=True)
def _uniform_oc(s):
    """Uniform double in (0, 1]."""
    bits = _next_u64(s) >> np.uint64(11)
    return (np.float64(bits) + 1.0) * 1.1102230246251565e-16


@njit(cache=True, nogil=True)
def _exponential(s, rate):
    return -math.log(_uniform_oc(s)) / rate


@njit(cache=True, nogil=True)
def _poisson(s, mean):
    if mean <= 0.0:
        return 0
    if mean < 30.0:
        # sequential multiplication of uniforms
        limit = math.exp(-mean)
        count = -1
        product = 1.0
        while product > limit:
            product *= _uniform_oc(s)
            count += 1
        return count
    # transformed rejection with squeeze (PTRS-style)
    b = 0.931 + 2.53 * math.sqrt(mean)
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    v_r = 0.9277 - 3.6224 / (b - 2.0)
    log_mean = math.log(mean)
    while True:
        u = _uniform_oc(s) - 0.5
        v = _uniform_oc(s)
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + mean + 0.43)
        if us >= 0.07 and v <= v_r:
            return int(k)
        if k < 0.0 or (us < 0.013 and v > us):
            continue
        if (math.log(v * inv_alpha / (a / (us * us) + b))
                <= k * log_mean - mean - math.lgamma(k + 1.0)):
            return int(k)


# -- trajectory kernels -------------------------------------------------------

@njit(cache=True, nogil=True)
def _record_until(grid, g, limit, xi, out):
    while g < grid.shape[0] and grid[g] < limit:
        out[g, :] = xi
        g += 1
    return g


@njit(cache=True, nogil=True)
def _append_event(ev_times, ev_reactions, n_events, te, chosen):
    if n_events == ev_times.shape[0]:
        cap = max(16, 2 * n_events)
        new_times = np.empty(cap, dtype=np.float64)
        new_reactions = np.empty(cap, dtype=np.int32)
        new_times[:n_events] = ev_times
        new_reactions[:n_events] = ev_reactions
        ev_times = new_times
        ev_reactions = new_reactions
    ev_times[n_events] = te
    ev_reactions[n_events] = chosen
    return ev_times, ev_reactions


@njit(cache=True, nogil=True)
def _run_direct(xi, xf, t0, t_end, grid, out, rng, net, a, stack,
                record, ev_times, ev_reactions):
    (law_kind, ma_rate, react_off, react_idx, react_stoich,
     mm_vm, mm_km, mm_s, mm_e, ea_off, ea_len, eb_off, eb_len,
     ops, args, consts, upd_off, upd_idx, upd_delta, dep_off, dep_idx) = net
    n_reactions = a.shape[0]
    t = t0
    g = 0
    n_events = 0
    while True:
        total, err, bad = _sweep(xf, t, law_kind, ma_rate, react_off,
                                 react_idx, react_stoich, mm_vm, mm_km,
                                 mm_s, mm_e, ea_off, ea_len, eb_off, eb_len,
                                 ops, args, consts, a, stack)
        if err != ERR_NONE:
            return err, bad, n_events, ev_times, ev_reactions
        for j in range(n_reactions):
            if a[j] < 0.0:
                return (ERR_NEGATIVE_PROPENSITY, j, n_events,
                        ev_times, ev_reactions)
        if total <= 0.0:
            break
        dt = _exponential(rng, total)
        te = t + dt
        if te > t_end:
            break
        threshold = _uniform_oc(rng) * total
        cum = 0.0
        chosen = n_reactions - 1
        for j in range(n_reactions):
            cum += a[j]
            if cum >= threshold:
                chosen = j
                break
        g = _record_until(grid, g, te, xi, out)
        for k in range(upd_off[chosen], upd_off[chosen + 1]):
            xi[upd_idx[k]] += upd_delta[k]
            xf[upd_idx[k]] = xi[upd_idx[k]]
        t = te
        if record:
            ev_times, ev_reactions = _append_event(
                ev_times, ev_reactions, n_events, te, chosen)
        n_events += 1
    g = _record_until(grid, g, np.inf, xi, out)
    return ERR_NONE, -1, n_events, ev_times, ev_reactions


@njit(cache=True, nogil=True)
def _heap_swap(heap, pos, i, j):
    heap[i], heap[j] = heap[j], heap[i]
    pos[heap[i]] = i
    pos[heap[j]] = j


@njit(cache=True, nogil=True)
def _sift_up(heap, pos, key, i):
    while i > 0:
        parent = (i - 1) // 2
        if key[heap[i]] < key[heap[parent]]:
            _heap_swap(heap, pos, i, parent)
            i = parent
        else:
            break


@njit(cache=True, nogil=True)
def _sift_down(heap, pos, key, i):
    n = heap.shape[0]
    while True:
        left = 2 * i + 1
        right = left + 1
        smallest = i
        if left < n and key[heap[left]] < key[heap[smallest]]:
            smallest = left
        if right < n and key[heap[right]] < key[heap[smallest]]:
            smallest = right
        if smallest == i:
            return
        _heap_swap(heap, pos, i, smallest)
        i = smallest


@njit(cache=True, nogil=True)
def _heap_update(heap, pos, key, reaction):
    i = pos[reaction]
    _sift_up(heap, pos, key, i)
    _sift_down(heap, pos, key, pos[reaction])


@njit(cache=True, nogil=True)
def _run_next_reaction(xi, xf, t0, t_end, grid, out, rng, net, a, stack,
                       record, ev_times, ev_reactions):
    (law_kind, ma_rate, react_off, react_idx, react_stoich,
     mm_vm, mm_km, mm_s, mm_e, ea_off, ea_len, eb_off, eb_len,
     ops, args, consts, upd_off, upd_idx, upd_delta, dep_off, dep_idx) = net
    n_reactions = a.shape[0]
    total, err, bad = _sweep(xf, t0, law_kind, ma_rate, react_off, react_idx,
                             react_stoich, mm_vm, mm_km, mm_s, mm_e,
                             ea_off, ea_len, eb_off, eb_len, ops, args,
                             consts, a, stack)
    if err != ERR_NONE:
        return err, bad, 0, ev_times, ev_reactions
    tau = np.empty(n_reactions, dtype=np.float64)
    heap = np.empty(n_reactions, dtype=np.int32)
    pos = np.empty(n_reactions, dtype=np.int32)
    for j in range(n_reactions):
        if a[j] < 0.0:
            return ERR_NEGATIVE_PROPENSITY, j, 0, ev_times, ev_reactions
        tau[j] = t0 + _exponential(rng, a[j]) if a[j] > 0.0 else np.inf
        heap[j] = j
        pos[j] = j
    for j in range(n_reactions // 2 - 1, -1, -1):
        _sift_down(heap, pos, tau, j)

    t = t0
    g = 0
    n_events = 0
    while n_reactions > 0:
        fired = heap[0]
        te = tau[fired]
        if te > t_end:
            break
        g = _record_until(grid, g, te, xi, out)
        for k in range(upd_off[fired], upd_off[fired + 1]):
            xi[upd_idx[k]] += upd_delta[k]
            xf[upd_idx[k]] = xi[upd_idx[k]]
        t = te
        if record:
            ev_times, ev_reactions = _append_event(
                ev_times, ev_reactions, n_events, te, fired)
        n_events += 1

        new_a, err = _propensity_one(
            fired, xf, t, law_kind, ma_rate, react_off, react_idx,
            react_stoich, mm_vm, mm_km, mm_s, mm_e, ea_off, ea_len,
            eb_off, eb_len, ops, args, consts, stack)
        if err != ERR_NONE:
            return err, fired, n_events, ev_times, ev_reactions
        if new_a < 0.0:
            return (ERR_NEGATIVE_PROPENSITY, fired, n_events,
                    ev_times, ev_reactions)
        a[fired] = new_a
        tau[fired] = t + _exponential(rng, new_a) if new_a > 0.0 else np.inf
        _heap_update(heap, pos, tau, fired)

        for d in range(dep_off[fired], dep_off[fired + 1]):
            dep = dep_idx[d]
            old_a = a[dep]
            new_a, err = _propensity_one(
                dep, xf, t, law_kind, ma_rate, react_off, react_idx,
                react_stoich, mm_vm, mm_km, mm_s, mm_e, ea_off, ea_len,
                eb_off, eb_len, ops, args, consts, stack)
            if err != ERR_NONE:
                return err, dep, n_events, ev_times, ev_reactions
            if new_a < 0.0:
                return (ERR_NEGATIVE_PROPENSITY, dep, n_events,
                        ev_times, ev_reactions)
            a[dep] = new_a
            if new_a <= 0.0:
                tau[dep] = np.inf
            elif old_a > 0.0 and tau[dep] != np.inf:
                tau[dep] = t + (old_a / new_a) * (tau[dep] - t)
            else:
                tau[dep] = t + _exponential(rng, new_a)
            _heap_update(heap, pos, tau, dep)
    g = _record_until(grid, g, np.inf, xi, out)
    return ERR_NONE, -1, n_events, ev_times, ev_reactions


@njit(cache=True, nogil=True)
def _run_tau_leap(xi, xf, t0, t_end, grid, out, rng, net, a, stack, leap):
    (law_kind, ma_rate, react_off, react_idx, react_stoich,
     mm_vm, mm_km, mm_s, mm_e, ea_off, ea_len, eb_off, eb_len,
     ops, args, consts, upd_off, upd_idx, upd_delta, dep_off, dep_idx) = net
    n_species = xi.shape[0]
    n_reactions = a.shape[0]
    delta = np.empty(n_species, dtype=np.int64)
    tau_min = 1e-6 * leap
    t = t0
    g = 0
    n_leaps = 0
    while t < t_end:
        total, err, bad = _sweep(xf, t, law_kind, ma_rate, react_off,
                                 react_idx, react_stoich, mm_vm, mm_km,
                                 mm_s, mm_e, ea_off, ea_len, eb_off, eb_len,
                                 ops, args, consts, a, stack)
        if err != ERR_NONE:
            return err, bad, n_leaps
        for j in range(n_reactions):
            if a[j] < 0.0:
                return ERR_NEGATIVE_PROPENSITY, j, n_leaps
        attempt = leap
        if t + attempt > t_end:
            attempt = t_end - t
        while True:
            for i in range(n_species):
                delta[i] = 0
            for j in range(n_reactions):
                if a[j] <= 0.0:
                    continue
                firings = _poisson(rng, a[j] * attempt)
                if firings > 0:
                    for k in range(upd_off[j], upd_off[j + 1]):
                        delta[upd_idx[k]] += upd_delta[k] * firings
            feasible = True
            for i in range(n_species):
                if xi[i] + delta[i] < 0:
                    feasible = False
                    break
            if feasible:
                te = t + attempt
                g = _record_until(grid, g, te, xi, out)
                for i in range(n_species):
                    if delta[i] != 0:
                        xi[i] += delta[i]
                        xf[i] = xi[i]
                t = te
                n_leaps += 1
                break
            attempt *= 0.5
            if attempt < tau_min:
                # one exact step, then resume leaping
                total = 0.0
                for j in range(n_reactions):
                    total += a[j]
                if total <= 0.0:
                    t = t_end
                    break
                dt = _exponential(rng, total)
                te = t + dt
                if te > t_end:
                    t = t_end
                    break
                threshold = _uniform_oc(rng) * total
                cum = 0.0
                chosen = n_reactions - 1
                for j in range(n_reactions):
                    cum += a[j]
                    if cum >= threshold:
                        chosen = j
                        break
                g = _record_until(grid, g, te, xi, out)
                for k in range(upd_off[chosen], upd_off[chosen + 1]):
                    xi[upd_idx[k]] += upd_delta[k]
                    xf[upd_idx[k]] = xi[upd_idx[k]]
                t = te
                break
    g = _record_until(grid, g, np.inf, xi, out)
    return ERR_NONE, -1, n_leaps
