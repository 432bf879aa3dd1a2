"""Dense matrix exponential by scaling and squaring with a degree-13 Padé approximant.

Works on a single ``(n, n)`` matrix or on a stack ``(..., n, n)``; stacked
inputs are exponentiated independently, each with its own scaling power.
Coefficients and the backward-error threshold follow Higham (2005),
"The scaling and squaring method for the matrix exponential revisited".
"""

import numpy as np

__all__ = ["expm"]

_PADE13 = np.array([
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
])

# Largest 1-norm for which the [13/13] approximant is accurate to unit roundoff.
_THETA13 = 5.371920351148152


def expm(A):
    """Matrix exponential of ``A`` (or of each matrix in a stack).

    Parameters
    ----------
    A : array_like, shape (..., n, n)
        Real square matrix or stack of matrices.

    Returns
    -------
    ndarray, shape (..., n, n)
    """
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {A.shape}")
    n = A.shape[-1]
    if A.size == 0:
        return A.copy()

    norms = np.abs(A).sum(axis=-2).max(axis=-1)
    with np.errstate(divide="ignore"):
        s = np.ceil(np.log2(norms / _THETA13))
    s = np.where(np.isfinite(s), np.maximum(s, 0), 0).astype(np.int64)
    A = A / np.ldexp(1.0, s)[..., None, None]

    b = _PADE13
    ident = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    R = np.linalg.solve(V - U, V + U)

    smax = int(s.max())
    if R.ndim == 2:
        for _ in range(smax):
            R = R @ R
        return R
    for k in range(smax):
        todo = s > k
        if todo.all():
            R = R @ R
        else:
            R[todo] = R[todo] @ R[todo]
    return R
