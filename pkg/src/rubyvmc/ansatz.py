"""Variational wavefunction: mean-field part plus a two-branch convolutional
network over unit cells.

    log psi(s) = theta_MF(s) + (1/|G|) sum_g theta_NN(g s)

The mean-field part is the quadratic form

    theta_MF(s) = sum_i s_i (A_i + sum_{j: R_ij < R_b} B_{R_ij} s_j)

with one complex ``B`` per sub-blockade inter-triangle distance class and a
uniform or site-dependent ``A``.  The network has a gauge-invariant branch
fed by the three vertex charges of each cell and an unconstrained branch fed
by the four triangle bits of each cell.  Each branch applies ``n_layers``
circular convolutions over unit cells with polynomial activations

    act1(x) = x/2 + x^2/4          (after all but the last layer)
    act2(x) = x/2 + x^2/4 - x^4/48 (after the element-wise branch merge)

followed by average pooling to a scalar.  Polynomial activations keep the
network holomorphic, so reverse-mode derivatives with respect to the complex
parameters are unambiguous.  The group average runs over the lattice point
group (or just the identity when ``symmetrize`` is off); the mean-field part
sits outside the average so symmetry-breaking seeds survive.

Parameters live in one flat complex vector with a fixed, versioned layout
(see ``PARAM_LAYOUT_VERSION`` and :meth:`RubyAnsatz.param_slices`); ansatz
objects treat the vector as immutable between updates (single writer, many
readers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import RubyLattice, decode, inter_triangle_classes

PARAM_LAYOUT_VERSION = "flat-v1"


def act1(x):
    # x/2 + x^2/4 evaluated as x*(1/2 + x/4) to limit temporaries
    out = x * 0.25
    out += 0.5
    out *= x
    return out


def act1_prime(x):
    return 0.5 + 0.5 * x


def act2(x):
    # x/2 + x^2/4 - x^4/48
    x2 = x * x
    out = x2 * x2
    out *= -1.0 / 48.0
    out += 0.25 * x2
    out += 0.5 * x
    return out


def act2_prime(x):
    return 0.5 + 0.5 * x - x * x * x / 12.0


@dataclass(frozen=True)
class NetworkShape:
    """Hyperparameters of the convolutional part."""

    features: int = 8
    n_layers: int = 3
    kernel: int | None = None          # default: ceil(max(L1, L2) / n_layers)
    symmetrize: bool = True
    site_dependent_A: bool = False
    blockade_radius: float = 2.4

    def resolved_kernel(self, lat: RubyLattice) -> int:
        if self.kernel is not None:
            k = self.kernel
        else:
            k = max(2, math.ceil(max(lat.L1, lat.L2) / self.n_layers))
            if lat.periodic:
                k = min(k, lat.L1, lat.L2)
        if lat.periodic and k > min(lat.L1, lat.L2):
            raise ValueError("kernel cannot exceed the torus extent")
        return k


class RubyAnsatz:
    """Wavefunction object: holds the lattice, the hyperparameters and one
    flat complex parameter vector."""

    def __init__(self, lat: RubyLattice, shape: NetworkShape | None = None,
                 params: np.ndarray | None = None):
        self.lat = lat
        self.shape = shape or NetworkShape()
        self._build_static()
        if params is None:
            params = np.zeros(self.n_params, dtype=np.complex128)
        self.set_params(params)

    # -- static structure ---------------------------------------------------

    def _build_static(self):
        lat, shape = self.lat, self.shape
        self.kernel = shape.resolved_kernel(lat)
        self.d = shape.features
        self.n_layers = shape.n_layers
        if self.n_layers < 2:
            raise ValueError("need at least two layers (hidden + merge)")

        grid = lat.cell_index_grid()
        L1, L2 = lat.L1, lat.L2
        ker = [(r1, r2) for r1 in range(self.kernel) for r2 in range(self.kernel)]
        n_cells = lat.n_cells
        dead = n_cells  # padded row of zeros for cells outside an open mask
        gm = np.full((n_cells, len(ker)), dead, dtype=np.int64)
        gp = np.full((n_cells, len(ker)), dead, dtype=np.int64)
        for c, (a1, a2) in enumerate(lat.cells):
            for k, (r1, r2) in enumerate(ker):
                if lat.periodic:
                    gm[c, k] = grid[(a1 - r1) % L1, (a2 - r2) % L2]
                    gp[c, k] = grid[(a1 + r1) % L1, (a2 + r2) % L2]
                else:
                    if 0 <= a1 - r1 < L1 and 0 <= a2 - r2 < L2 and grid[a1 - r1, a2 - r2] >= 0:
                        gm[c, k] = grid[a1 - r1, a2 - r2]
                    if 0 <= a1 + r1 < L1 and 0 <= a2 + r2 < L2 and grid[a1 + r1, a2 + r2] >= 0:
                        gp[c, k] = grid[a1 + r1, a2 + r2]
        self._gather_minus = gm
        self._gather_plus = gp
        self._pool = 1.0 / (n_cells * self.d)

        # dense block-circulant operator index: source cell m contributes to
        # target cell a through kernel entry ridx[m, a] (or -1)
        ridx = -np.ones((n_cells, n_cells), dtype=np.int64)
        coords = {tuple(c): i for i, c in enumerate(lat.cells)}
        for a, (a1, a2) in enumerate(lat.cells):
            for k, (r1, r2) in enumerate(ker):
                if lat.periodic:
                    m = coords[((a1 - r1) % L1, (a2 - r2) % L2)]
                else:
                    key = (a1 - r1, a2 - r2)
                    if key not in coords:
                        continue
                    m = coords[key]
                ridx[m, a] = k
        self._circulant_idx = ridx

        # mean-field pair classes below the blockade radius
        vals, pairs = inter_triangle_classes(lat, shape.blockade_radius)
        self.mf_distances = vals
        self._mf_pairs = pairs
        self.n_mf_A = lat.n_atoms if shape.site_dependent_A else 1
        self.n_mf_B = len(vals)
        # adjacency matrices turn the pair sums into one GEMM per class
        adj = np.zeros((len(vals), lat.n_atoms, lat.n_atoms))
        for k, pr in enumerate(pairs):
            adj[k, pr[:, 0], pr[:, 1]] = 1.0
            adj[k, pr[:, 1], pr[:, 0]] = 1.0
        self._mf_adj = adj

        # group action used for the output average
        if shape.symmetrize:
            self.group = lat.point_group
        else:
            self.group = (lat.point_group[0],)

        # parameter layout
        l2 = self.kernel * self.kernel
        sizes = [("mf_A", self.n_mf_A), ("mf_B", self.n_mf_B)]
        for branch, ch_in in (("inv", 3), ("noninv", 4)):
            for n in range(self.n_layers):
                cin = ch_in if n == 0 else self.d
                sizes.append((f"{branch}_W{n}", l2 * cin * self.d))
                if n < self.n_layers - 1:
                    sizes.append((f"{branch}_b{n}", self.d))
        sizes.append(("merge_b", self.d))
        self.param_slices = {}
        off = 0
        for name, size in sizes:
            self.param_slices[name] = slice(off, off + size)
            off += size
        self.n_params = off
        self._w_shapes = {}
        for branch, ch_in in (("inv", 3), ("noninv", 4)):
            for n in range(self.n_layers):
                cin = ch_in if n == 0 else self.d
                self._w_shapes[f"{branch}_W{n}"] = (l2 * cin, self.d)

    # -- parameters -----------------------------------------------------------

    def set_params(self, params):
        params = np.asarray(params, dtype=np.complex128)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params.copy()
        self.params.setflags(write=False)
        self._op_cache = {}

    def get_params(self) -> np.ndarray:
        return self.params.copy()

    def replace_params(self, params) -> "RubyAnsatz":
        out = object.__new__(RubyAnsatz)
        out.__dict__.update(self.__dict__)
        out.set_params(params)
        return out

    def _w(self, name):
        return self.params[self.param_slices[name]].reshape(self._w_shapes[name])

    def _b(self, name):
        return self.params[self.param_slices[name]]

    # -- inputs ---------------------------------------------------------------

    def _transform(self, states, g):
        mapped = g.state_maps[np.arange(self.lat.n_tri), states]
        out = np.empty_like(states)
        out[..., g.tri_perm] = mapped
        return out

    def _transform_batch(self, states):
        """Stack the group orbit of a batch: (G*B, n_tri)."""
        return np.concatenate([self._transform(states, g) for g in self.group], axis=0)

    def _features(self, states):
        """Invariant (vertex-charge) and raw (triangle-bit) cell features."""
        lat = self.lat
        occ = decode(lat, states)
        counts = occ[..., lat.vert_atoms].sum(axis=-1)
        charges = 1.0 - 2.0 * (counts % 2)
        pad = np.zeros(charges.shape[:-1] + (1,))
        charges = np.concatenate([charges, pad], axis=-1)
        inv = charges[..., lat.cell_verts]                       # (B, n_cells, 3)
        up = states[..., lat.cell_tris[:, 0]]
        dn = states[..., lat.cell_tris[:, 1]]
        raw = np.stack([up & 1, up >> 1, dn & 1, dn >> 1], axis=-1).astype(np.float64)
        return inv, raw

    # -- forward --------------------------------------------------------------

    def _wop(self, name, ch_in):
        """Dense block-circulant form of a convolution kernel, cached per
        parameter vector: shape (n_cells*ch_in, n_cells*d)."""
        cached = self._op_cache.get(name)
        if cached is not None:
            return cached
        n_cells = self.lat.n_cells
        l2 = self.kernel * self.kernel
        Wk = self._w(name).reshape(l2, ch_in, self.d)
        op = np.zeros((n_cells, ch_in, n_cells, self.d), dtype=np.complex128)
        mm, aa = np.nonzero(self._circulant_idx >= 0)
        op[mm, :, aa, :] = Wk[self._circulant_idx[mm, aa]]
        op = op.reshape(n_cells * ch_in, n_cells * self.d)
        self._op_cache[name] = op
        return op

    def _bias_tiled(self, name):
        key = ("bias", name)
        cached = self._op_cache.get(key)
        if cached is None:
            cached = np.tile(self._b(name), self.lat.n_cells)
            self._op_cache[key] = cached
        return cached

    def _wop_parts(self, name, ch_in):
        key = ("parts", name)
        cached = self._op_cache.get(key)
        if cached is None:
            op = self._wop(name, ch_in)
            cached = (np.ascontiguousarray(op.real), np.ascontiguousarray(op.imag))
            self._op_cache[key] = cached
        return cached

    def _theta_block(self, states):
        """Network output of one symmetry representative, GEMM formulation.

        The first layer runs as two real GEMMs (the inputs are real)."""
        inv, raw = self._features(states)
        B = inv.shape[0]
        u = {}
        for br, feat, cin in (("inv", inv, 3), ("noninv", raw, 4)):
            f = feat.reshape(B, -1)
            Wr, Wi = self._wop_parts(f"{br}_W0", cin)
            z = (f @ Wr) + 1j * (f @ Wi)
            if self.n_layers > 1:
                z += self._bias_tiled(f"{br}_b0")
                u[br] = act1(z)
            else:
                u[br] = z
        last = self.n_layers - 1
        for n in range(1, last):
            for br in ("inv", "noninv"):
                z = u[br] @ self._wop(f"{br}_W{n}", self.d)
                z += self._bias_tiled(f"{br}_b{n}")
                u[br] = act1(z)
        if last >= 1:
            z = u["inv"] @ self._wop(f"inv_W{last}", self.d)
            z += u["noninv"] @ self._wop(f"noninv_W{last}", self.d)
        else:
            z = u["inv"] + u["noninv"]
        z += self._bias_tiled("merge_b")
        return act2(z).sum(axis=1) * self._pool

    def _conv(self, u, W):
        """Circular convolution over cells as one tall matmul."""
        B, n_cells, ch = u.shape
        pad = np.zeros((B, 1, ch), dtype=u.dtype)
        up = np.concatenate([u, pad], axis=1)
        g = up[:, self._gather_minus, :]                          # (B, nc, l2, ch)
        out = g.reshape(B * n_cells, -1) @ W
        return out.reshape(B, n_cells, self.d), g

    def _conv_backward_input(self, gz, W, ch_in):
        B, n_cells, _ = gz.shape
        pad = np.zeros((B, 1, self.d), dtype=gz.dtype)
        gzp = np.concatenate([gz, pad], axis=1)
        g = gzp[:, self._gather_plus, :]                          # (B, nc, l2, d)
        l2 = self.kernel * self.kernel
        Wt = W.reshape(l2, ch_in, self.d).transpose(0, 2, 1).reshape(l2 * self.d, ch_in)
        out = g.reshape(B * n_cells, -1) @ Wt
        return out.reshape(B, n_cells, ch_in)

    def _network_forward(self, states, keep_tape=False):
        inv, raw = self._features(states)
        tape = {"u": {}, "z": {}}
        u = {"inv": inv, "noninv": raw}
        for n in range(self.n_layers - 1):
            for br in ("inv", "noninv"):
                z, g = self._conv(u[br], self._w(f"{br}_W{n}"))
                z = z + self._b(f"{br}_b{n}")
                if keep_tape:
                    tape["u"][br, n] = g
                    tape["z"][br, n] = z
                u[br] = act1(z)
        last = self.n_layers - 1
        z_inv, g_inv = self._conv(u["inv"], self._w(f"inv_W{last}"))
        z_non, g_non = self._conv(u["noninv"], self._w(f"noninv_W{last}"))
        z = z_inv + z_non + self._b("merge_b")
        if keep_tape:
            tape["u"]["inv", last] = g_inv
            tape["u"]["noninv", last] = g_non
            tape["z"]["merge"] = z
        theta = act2(z).sum(axis=(1, 2)) * self._pool
        return theta, tape

    def mean_field(self, states) -> np.ndarray:
        s = 1.0 - 2.0 * decode(self.lat, np.asarray(states)).astype(np.float64)
        A = self._b("mf_A")
        out = (s @ A) if self.shape.site_dependent_A else A[0] * s.sum(axis=-1)
        for B_k, adj in zip(self._b("mf_B"), self._mf_adj):
            # 2 B_k sum_{i<j in class} s_i s_j = B_k s . (adj s)
            out = out + B_k * ((s @ adj) * s).sum(axis=-1)
        return out

    def network(self, states, chunk: int = 262144) -> np.ndarray:
        """Group-averaged network part alone."""
        states = np.atleast_2d(np.asarray(states))
        B = states.shape[0]
        theta = np.zeros(B, dtype=np.complex128)
        for g in self.group:
            trans = self._transform(states, g)
            for start in range(0, B, chunk):
                theta[start : start + chunk] += self._theta_block(trans[start : start + chunk])
        return theta / len(self.group)

    def log_amplitude(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states))
        return self.mean_field(states) + self.network(states)

    # -- derivatives ------------------------------------------------------------

    def log_derivatives(self, states, chunk: int = 16384):
        """Per-sample holomorphic derivatives d log psi / d alpha_k.

        Returns (O, logpsi): O has shape (B, n_params).
        """
        states = np.atleast_2d(np.asarray(states))
        B = states.shape[0]
        O = np.zeros((B, self.n_params), dtype=np.complex128)

        # mean-field block
        s = 1.0 - 2.0 * decode(self.lat, states).astype(np.float64)
        sl = self.param_slices["mf_A"]
        if self.shape.site_dependent_A:
            O[:, sl] = s
        else:
            O[:, sl] = s.sum(axis=-1, keepdims=True)
        slB = self.param_slices["mf_B"]
        for k, adj in enumerate(self._mf_adj):
            O[:, slB.start + k] = ((s @ adj) * s).sum(axis=-1)

        logpsi = self.mean_field(states).astype(np.complex128)
        G = len(self.group)
        for g in self.group:
            trans = self._transform(states, g)
            for start in range(0, B, chunk):
                block = trans[start : start + chunk]
                theta, grads = self._network_backward(block)
                rows = slice(start, start + len(block))
                logpsi[rows] += theta / G
                for name, gval in grads.items():
                    O[rows, self.param_slices[name]] += gval.reshape(len(block), -1) / G
        return O, logpsi

    def _network_backward(self, states):
        theta, tape = self._network_forward(states, keep_tape=True)
        B = states.shape[0]
        last = self.n_layers - 1
        grads = {}
        gz = act2_prime(tape["z"]["merge"]) * self._pool            # (B, nc, d)
        grads["merge_b"] = gz.sum(axis=1)
        gu = {}
        for br, ch_in in (("inv", 3), ("noninv", 4)):
            g = tape["u"][br, last]                                  # (B, nc, l2, cin)
            gm = g.reshape(B, g.shape[1], -1)
            grads[f"{br}_W{last}"] = np.matmul(gm.transpose(0, 2, 1), gz)
            cin = ch_in if last == 0 else self.d
            gu[br] = self._conv_backward_input(gz, self._w(f"{br}_W{last}"), cin)
        for n in range(self.n_layers - 2, -1, -1):
            for br, ch_in in (("inv", 3), ("noninv", 4)):
                gz = gu[br] * act1_prime(tape["z"][br, n])
                grads[f"{br}_b{n}"] = gz.sum(axis=1)
                g = tape["u"][br, n]
                gm = g.reshape(B, g.shape[1], -1)
                grads[f"{br}_W{n}"] = np.matmul(gm.transpose(0, 2, 1), gz)
                if n > 0:
                    gu[br] = self._conv_backward_input(gz, self._w(f"{br}_W{n}"), self.d)
        return theta, grads


# ---------------------------------------------------------------------------
# initialization and seed patterns


def initial_params(ansatz: RubyAnsatz, rng, nn_scale: float = 1e-2,
                   mf_A=None, mf_B=None) -> np.ndarray:
    """Random complex Gaussian network weights plus mean-field settings.

    ``mf_A`` may be a scalar (uniform mode), an array over atoms
    (site-dependent mode), or None for a small random value.
    """
    p = np.zeros(ansatz.n_params, dtype=np.complex128)
    n = ansatz.n_params
    p += nn_scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    slA = ansatz.param_slices["mf_A"]
    if mf_A is not None:
        p[slA] = np.asarray(mf_A, dtype=np.complex128)
    slB = ansatz.param_slices["mf_B"]
    if mf_B is not None:
        p[slB] = np.asarray(mf_B, dtype=np.complex128)
    return p


def product_state_params(ansatz: RubyAnsatz, big_A: float = 6.0) -> np.ndarray:
    """Parameters representing the all-ground product state to high accuracy:
    a large positive uniform A suppresses every excitation by exp(-2*A)."""
    p = np.zeros(ansatz.n_params, dtype=np.complex128)
    p[ansatz.param_slices["mf_A"]] = big_A
    return p


def seed_pattern_params(ansatz: RubyAnsatz, occupations, rng,
                        nn_scale: float = 1e-2, amplitude: float = 1.0) -> np.ndarray:
    """Site-dependent seeding: A_i = -amplitude on atoms meant to be excited
    and +amplitude elsewhere (requires ``site_dependent_A``)."""
    if not ansatz.shape.site_dependent_A:
        raise ValueError("seeding needs a site-dependent mean-field A")
    occupations = np.asarray(occupations)
    p = initial_params(ansatz, rng, nn_scale=nn_scale)
    p[ansatz.param_slices["mf_A"]] = np.where(occupations > 0, -amplitude, amplitude)
    return p


def vbs_occupations(lat: RubyLattice) -> np.ndarray:
    """Checkerboard crystal seed: the dimer cover of the 2x2 torus with the
    largest checkerboard order parameter, tiled over the target torus."""
    from .lattice import build_lattice, enumerate_states, parity_charges, tile_states
    from .observables import order_parameters

    if not lat.periodic or lat.L1 % 2 or lat.L2 % 2:
        raise ValueError("crystal seeds need a periodic torus with even cell counts")
    lat2 = build_lattice(2, 2, rho=lat.rho)
    states2 = enumerate_states(lat2.n_tri)
    covers = states2[(parity_charges(lat2, states2) == -1).all(axis=1)]
    scores = [order_parameters(lat2, c[None, :])[0].mean.real for c in covers]
    best = covers[int(np.argmax(scores))]
    return decode(lat, tile_states(lat2, best, lat))


def ss_occupations(lat: RubyLattice) -> np.ndarray:
    """Stripe crystal seed: every triangle excited (density one third), the
    excited leg alternating between columns so excitations align in rows."""
    if not lat.periodic or lat.L1 % 2:
        raise ValueError("the stripe seed needs a periodic torus with even L1")
    states = np.zeros(lat.n_tri, dtype=np.uint8)
    for c, (n1, n2) in enumerate(lat.cells):
        states[lat.cell_tris[c][0]] = 1 if n1 % 2 == 0 else 3
        states[lat.cell_tris[c][1]] = 1 if n1 % 2 == 0 else 3
    return decode(lat, states)
