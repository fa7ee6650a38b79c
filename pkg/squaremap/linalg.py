from __future__ import annotations

import hashlib
import logging
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .config import factor_backend
from .errors import SolverError

logger = logging.getLogger(__name__)

try:
    from sksparse import cholmod  # CHOLMOD with AMD ordering

    HAS_CHOLMOD = True
except ImportError:
    cholmod = None
    HAS_CHOLMOD = False

REGULARIZATION = 1e-10
MAX_SHIFTS = 6


class NotPositiveDefinite(Exception):
    pass


class SPDFactor:
    """Fill-reducing sparse factorization of one symmetric positive definite block.

    Uses CHOLMOD when scikit-sparse is importable and SuperLU with symmetric
    mode and diagonal pivoting otherwise. A block that fails the positive
    definiteness check is retried with growing diagonal shifts; `shift` records
    the one used.
    """

    def __init__(self, A, backend: Optional[str] = None, label: str = "block") -> None:
        self.A = sparse.csc_matrix(A)
        self.size = self.A.shape[0]
        self.label = label
        backend = backend or factor_backend()
        if backend == "auto":
            backend = "cholmod" if HAS_CHOLMOD else "superlu"
        if backend == "cholmod" and not HAS_CHOLMOD:
            raise SolverError("CHOLMOD requested but scikit-sparse is not installed")
        self.backend = backend
        self.shift = 0.0
        self._factor = None
        if self.size == 0:
            return

        scale = float(np.abs(self.A.diagonal()).max()) or 1.0
        for attempt in range(MAX_SHIFTS):
            shift = 0.0 if attempt == 0 else REGULARIZATION * scale * 100.0 ** (attempt - 1)
            try:
                self._factorize(self.A + shift * sparse.identity(self.size, format="csc"))
            except NotPositiveDefinite:
                continue
            self.shift = shift
            break
        else:
            raise SolverError(f"{label}: not positive definite even after regularization")
        if self.shift:
            logger.warning("linalg: %s regularized with diagonal shift %.3g", label, self.shift)

    @property
    def regularized(self) -> bool:
        return self.shift > 0.0

    def _factorize(self, A: sparse.csc_matrix) -> None:
        if self.backend == "cholmod":
            try:
                self._factor = cholmod.cholesky(A, ordering_method="amd")
            except cholmod.CholmodNotPositiveDefiniteError as exc:
                raise NotPositiveDefinite(str(exc)) from exc
            return
        try:
            lu = splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:  # exactly singular
            raise NotPositiveDefinite(str(exc)) from exc
        if not np.all(lu.U.diagonal() > 0):
            raise NotPositiveDefinite("non-positive pivot")
        self._factor = lu

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if self.size == 0:
            return np.zeros_like(b)
        return np.asarray(self._factor(b) if self.backend == "cholmod" else self._factor.solve(b))

    @property
    def permutation(self) -> np.ndarray:
        if self.size == 0:
            return np.zeros(0, dtype=np.int64)
        if self.backend == "cholmod":
            return np.asarray(self._factor.P())
        return np.asarray(self._factor.perm_c)

    def reassemble(self) -> sparse.csr_matrix:
        """Multiply the factors back together in the original ordering."""
        n = self.size
        if n == 0:
            return sparse.csr_matrix((0, 0))
        if self.backend == "cholmod":
            L = self._factor.L()
            inv = np.argsort(self._factor.P())
            return sparse.csr_matrix((L @ L.T)[inv][:, inv])
        lu = self._factor
        Pr = sparse.csc_matrix((np.ones(n), (lu.perm_r, np.arange(n))), shape=(n, n))
        Pc = sparse.csc_matrix((np.ones(n), (np.arange(n), lu.perm_c)), shape=(n, n))
        return sparse.csr_matrix(Pr.T @ (lu.L @ lu.U) @ Pc.T)

    def fingerprint(self) -> str:
        h = hashlib.sha1()
        if self.size:
            if self.backend == "cholmod":
                L = self._factor.L()
                parts = [L.data, L.indices, L.indptr, self.permutation]
            else:
                lu = self._factor
                parts = [lu.L.data, lu.L.indices, lu.U.data, lu.U.indices, lu.perm_c, lu.perm_r]
            for arr in parts:
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()
