"""Counter-based Gaussian increment streams.

Increments are addressed by content, not by generation order: the draw for
(seed, salt, level, realization block, step block) is a fixed Philox
counter position, so a single realization, a vectorized ensemble and a
worker-parallel run all read bit-identical numbers.  Streams at different
`salt` (transport vs viscous noise) or `level` (Brownian-bridge refinement
stages) never overlap because those words sit in the Philox counter.

Refinement halves dt while keeping the coarse path: consecutive fine
increments sum to the parent increment (midpoint bridge construction), so
dt-convergence studies compare the same Brownian path.
"""

import numpy as np

STEP_BLOCK = 64
REAL_BLOCK = 64

SALT_TRANSPORT = 0
SALT_VISCOUS = 1
SALT_INIT = 2

_KEY_MIX = 0x9E3779B97F4A7C15  # second Philox key word, fixed


def uniform_rows(seed: int, r0: int, r1: int, ncols: int, salt: int = SALT_INIT) -> np.ndarray:
    """Deterministic uniforms in [0, 1) for realizations [r0, r1), shape (r1-r0, ncols).

    Drawn per REAL_BLOCK like the increment streams, so values do not depend
    on how a run is blocked or parallelized.  Used for initial conditions.
    """
    out = np.empty((r1 - r0, ncols))
    r = r0
    while r < r1:
        rb, ri = divmod(r, REAL_BLOCK)
        take = min(REAL_BLOCK - ri, r1 - r)
        gen = np.random.Generator(
            np.random.Philox(key=[seed & (2**64 - 1), _KEY_MIX], counter=[salt, 0, rb, 0])
        )
        block = gen.random((REAL_BLOCK, ncols))
        out[r - r0 : r - r0 + take] = block[ri : ri + take]
        r += take
    return out


class BlockNoise:
    """One scalar-valued increment table: (step, realization) -> (ncols,) draws.

    Entries are N(0, dt) at the base level; refined levels are built from
    the parent via the bridge.  Blocks of shape (STEP_BLOCK, REAL_BLOCK,
    ncols) are drawn lazily and cached for the step block in use.
    """

    def __init__(self, seed: int, dt: float, ncols: int, salt: int = 0, level: int = 0,
                 _parent=None):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.seed = int(seed)
        self.dt = float(dt)
        self.ncols = int(ncols)
        self.salt = int(salt)
        self.level = int(level)
        self._parent = _parent
        self._scale = np.sqrt(self.dt)
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def _raw_block(self, sb: int, rb: int) -> np.ndarray:
        """Standard-normal block for (step block sb, realization block rb)."""
        counter = [self.salt, self.level, rb, sb]
        gen = np.random.Generator(
            np.random.Philox(key=[self.seed & (2**64 - 1), _KEY_MIX], counter=counter)
        )
        return gen.standard_normal((STEP_BLOCK, REAL_BLOCK, self.ncols))

    def _block(self, sb: int, rb: int) -> np.ndarray:
        key = (sb, rb)
        blk = self._cache.get(key)
        if blk is not None:
            return blk
        if self._parent is None:
            blk = self._scale * self._raw_block(sb, rb)
        else:
            # fine steps [sb*B, (sb+1)*B) come from parent steps [sb*B/2, sb*B/2 + B/2),
            # which always sit inside a single parent block
            half = STEP_BLOCK // 2
            pb, pi = divmod(sb * half, STEP_BLOCK)
            parent = self._parent._block(pb, rb)[pi : pi + half]
            eta = 0.5 * np.sqrt(self._parent.dt) * self._raw_block(sb, rb)[:half]
            fine = np.empty((STEP_BLOCK, REAL_BLOCK, self.ncols))
            fine[0::2] = 0.5 * parent + eta
            fine[1::2] = 0.5 * parent - eta
            blk = fine
        # keep only the current and previous step block per realization block
        stale = [k for k in self._cache if k[1] == rb and abs(k[0] - sb) > 1]
        for k in stale:
            del self._cache[k]
        self._cache[key] = blk
        return blk

    def rows(self, step: int, r0: int, r1: int) -> np.ndarray:
        """Increments for one step and realizations [r0, r1), shape (r1-r0, ncols)."""
        sb, si = divmod(step, STEP_BLOCK)
        out = np.empty((r1 - r0, self.ncols))
        r = r0
        while r < r1:
            rb, ri = divmod(r, REAL_BLOCK)
            take = min(REAL_BLOCK - ri, r1 - r)
            out[r - r0 : r - r0 + take] = self._block(sb, rb)[si, ri : ri + take]
            r += take
        return out

    def refine(self) -> "BlockNoise":
        """Stream at dt/2 whose pairwise sums reproduce this stream's increments."""
        return BlockNoise(
            self.seed, self.dt / 2.0, self.ncols, salt=self.salt,
            level=self.level + 1, _parent=self,
        )


class NoiseRealization:
    """Per-realization view of the transport/viscous increment streams.

    Identical (seed, dt, n_transport, n_viscous, realization) reproduce the
    identical stream; all increments within one step block are mutually
    independent draws.  Transport (W^k) and viscous (W~^m) parts live in
    separate salted streams so inner viscous resampling can rebind the
    viscous realization while sharing the transport path.
    """

    def __init__(self, seed: int, dt: float, n_transport: int, n_viscous: int = 0,
                 realization: int = 0, viscous_realization: int | None = None,
                 _transport: BlockNoise | None = None, _viscous: BlockNoise | None = None):
        self.seed = int(seed)
        self.dt = float(dt)
        self.n_transport = int(n_transport)
        self.n_viscous = int(n_viscous)
        self.realization = int(realization)
        self.viscous_realization = (
            int(viscous_realization) if viscous_realization is not None else int(realization)
        )
        self._transport = _transport or BlockNoise(seed, dt, n_transport, salt=SALT_TRANSPORT)
        self._viscous = _viscous or (
            BlockNoise(seed, dt, n_viscous, salt=SALT_VISCOUS) if n_viscous else None
        )

    def increments(self, step: int):
        """(dW (n_transport,), dW~ (n_viscous,)) for one step, variance dt each."""
        r = self.realization
        dw = self._transport.rows(step, r, r + 1)[0]
        if self._viscous is None:
            return dw, np.zeros(0)
        rv = self.viscous_realization
        return dw, self._viscous.rows(step, rv, rv + 1)[0]

    def refine(self) -> "NoiseRealization":
        return NoiseRealization(
            self.seed, self.dt / 2.0, self.n_transport, self.n_viscous,
            realization=self.realization, viscous_realization=self.viscous_realization,
            _transport=self._transport.refine(),
            _viscous=self._viscous.refine() if self._viscous else None,
        )


class EnsembleNoise:
    """Block access to the same streams for realizations [0, n).

    Wide row ranges are assembled once per step block and then served as
    views; the numbers are identical to per-realization access.
    """

    _ASSEMBLE_MIN = 256  # assemble-and-cache range for the row count
    _ASSEMBLE_MAX = 4096  # beyond this, per-step assembly beats the memory cost

    def __init__(self, seed: int, dt: float, n_transport: int, n_viscous: int = 0,
                 viscous_offset: int = 0):
        self.seed = int(seed)
        self.dt = float(dt)
        self.n_transport = int(n_transport)
        self.n_viscous = int(n_viscous)
        self.viscous_offset = int(viscous_offset)
        self._transport = BlockNoise(seed, dt, n_transport, salt=SALT_TRANSPORT)
        self._viscous = BlockNoise(seed, dt, n_viscous, salt=SALT_VISCOUS) if n_viscous else None
        self._assembled: dict = {}

    def _assembled_rows(self, stream: BlockNoise, tag: str, step: int, r0: int, r1: int):
        sb, si = divmod(step, STEP_BLOCK)
        key = (tag, sb, r0, r1)
        table = self._assembled.get(key)
        if table is None:
            table = np.concatenate(
                [stream.rows(sb * STEP_BLOCK + i, r0, r1)[None] for i in range(STEP_BLOCK)]
            )
            self._assembled = {k: v for k, v in self._assembled.items() if k[0] != tag}
            self._assembled[key] = table
        return table[si]

    def step_rows(self, step: int, r0: int, r1: int):
        assemble = self._ASSEMBLE_MIN <= r1 - r0 <= self._ASSEMBLE_MAX
        if assemble:
            dw = self._assembled_rows(self._transport, "w", step, r0, r1)
        else:
            dw = self._transport.rows(step, r0, r1)
        if self._viscous is None:
            return dw, None
        off = self.viscous_offset
        if assemble:
            return dw, self._assembled_rows(self._viscous, "v", step, r0 + off, r1 + off)
        return dw, self._viscous.rows(step, r0 + off, r1 + off)

    def refine(self) -> "EnsembleNoise":
        out = EnsembleNoise.__new__(EnsembleNoise)
        out.seed, out.dt = self.seed, self.dt / 2.0
        out.n_transport, out.n_viscous = self.n_transport, self.n_viscous
        out.viscous_offset = self.viscous_offset
        out._transport = self._transport.refine()
        out._viscous = self._viscous.refine() if self._viscous else None
        out._assembled = {}
        return out
