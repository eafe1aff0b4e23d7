# Licensed to the Apache Software Foundation (ASF) under one
# or more contributor license agreements.  See the NOTICE file
# distributed with this work for additional information
# regarding copyright ownership.  The ASF licenses this file
# to you under the Apache License, Version 2.0 (the
# "License"); you may not use this file except in compliance
# with the License.  You may obtain a copy of the License at

#   http://www.apache.org/licenses/LICENSE-2.0

# Unless required by applicable law or agreed to in writing,
# software distributed under the License is distributed on an
# "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
# KIND, either express or implied.  See the License for the
# specific language governing permissions and limitations
# under the License.

import math
from functools import wraps
from typing import Sequence

import numpy as np

from modematch.constants import EIGENGAP_TOLERANCE
from modematch.dataclasses import DRContext
from modematch.exceptions import DegenerateSpectrum, ShapeMismatch, ValidationError
from modematch.manager import ExperimentManager
from modematch.module import Module
from modematch.network import ClassifierModel, cross_entropy
from modematch.types import IndexArray, Matrix, Vector


def square_side(num_parameters: int) -> int:
    if num_parameters < 1:
        raise ValidationError("A model needs at least one parameter to reshape.")
    return math.isqrt(num_parameters - 1) + 1


def reshape_vector(flat: Vector) -> tuple[Matrix, int]:
    """
    Zero-pad flat to the next square and fill an n x n matrix
    row-major. Returns the matrix and the number of padded entries.
    """
    flat = np.asarray(flat, dtype=np.float64).ravel()
    n = square_side(flat.size)
    pad_count = n * n - flat.size
    return np.concatenate([flat, np.zeros(pad_count)]).reshape(n, n), pad_count


def reshape_params(model: ClassifierModel) -> Matrix:
    return reshape_vector(model.flat_parameters())[0]


def symmetric_spectrum(m: Matrix) -> tuple[Vector, Matrix]:
    """
    Eigenpairs of (m + mᵀ) / 2 ordered by descending |λ|. Each
    eigenvector is signed so that its largest-magnitude component is positive.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeMismatch(f"Expected a square matrix, got shape {m.shape}.")
    if not np.all(np.isfinite(m)):
        raise ValidationError("Matrix has non-finite entries.")

    eigenvalues, eigenvectors = np.linalg.eigh((m + m.T) / 2)
    order = np.argsort(-np.abs(eigenvalues), kind="stable")
    eigenvalues, eigenvectors = eigenvalues[order], eigenvectors[:, order]

    columns = np.arange(eigenvectors.shape[1])
    pivots = np.argmax(np.abs(eigenvectors), axis=0)
    signs = np.where(eigenvectors[pivots, columns] < 0, -1.0, 1.0)
    return eigenvalues, eigenvectors * signs


def _check_rank(k: int, n: int) -> None:
    if not 1 <= k <= n:
        raise ValidationError(f"Rank k must lie in [1, {n}], got {k}.")


def significant_eigvecs(m: Matrix, k: int) -> Matrix:
    _check_rank(k, np.shape(m)[0])
    return symmetric_spectrum(m)[1][:, :k]


def eigengap(eigenvalues: Vector, k: int) -> float:
    """
    Smallest separation the directional gradient divides by: between each of
    the top-k eigenvalues and every other eigenvalue, and between consecutive
    magnitudes up to rank k.
    """
    n = len(eigenvalues)
    if n == 1:
        return math.inf

    gaps = []
    for i in range(k):
        others = np.delete(eigenvalues, i)
        gaps.append(np.min(np.abs(eigenvalues[i] - others)))
    magnitudes = np.abs(eigenvalues)
    gaps.extend(np.abs(magnitudes[: min(k, n - 1)] - magnitudes[1: min(k, n - 1) + 1]))
    return float(np.min(gaps))


def align_signs(e_theta: Matrix, e_phi: Matrix) -> tuple[Matrix, Vector]:
    """Flip columns of ``e_theta`` whose overlap with ``e_phi`` is negative."""
    signs = np.where(np.einsum("ij,ij->j", e_theta, e_phi) < 0, -1.0, 1.0)
    return e_theta * signs, signs


def alignment_loss(e_theta: Matrix, e_phi: Matrix) -> float:
    aligned, _ = align_signs(e_theta, e_phi)
    k = e_theta.shape[1]
    return float(np.linalg.norm(aligned.T @ e_phi - np.eye(k)))


def _check_pair(theta: ClassifierModel, phi: ClassifierModel) -> None:
    if theta.layer_sizes != phi.layer_sizes:
        raise ShapeMismatch(
            f"Directional regularization needs identical architectures, got "
            f"{list(theta.layer_sizes)} and {list(phi.layer_sizes)}."
        )


def dr_context(theta: ClassifierModel, phi: ClassifierModel, k: int) -> DRContext:
    _check_pair(theta, phi)
    m_theta, pad_count = reshape_vector(theta.flat_parameters())
    m_phi, _ = reshape_vector(phi.flat_parameters())
    _check_rank(k, m_theta.shape[0])

    values_theta, vectors_theta = symmetric_spectrum(m_theta)
    values_phi, vectors_phi = symmetric_spectrum(m_phi)
    e_phi_hat = vectors_phi[:, :k]
    e_theta_hat, signs = align_signs(vectors_theta[:, :k], e_phi_hat)

    return DRContext(
        m_theta=m_theta,
        m_phi=m_phi,
        e_theta_hat=e_theta_hat,
        e_phi_hat=e_phi_hat,
        k=k,
        pad_count=pad_count,
        sign_alignment=signs,
        eigenvalues_theta=values_theta,
        eigenvalues_phi=values_phi,
    )


def dr_loss(theta: ClassifierModel, phi: ClassifierModel, k: int) -> float:
    context = dr_context(theta, phi, k)
    return float(np.linalg.norm(context.cross - np.eye(k)))


def directional_loss_and_grad(
    flat: Vector, e_phi_hat: Matrix, k: int
) -> tuple[float, Vector | None, Vector, float]:
    """
    DR loss at flat parameters flat against a fixed basis e_phi_hat.

    Returns the loss, its gradient with respect to flat (None when the
    spectrum is degenerate), the eigenvalues of the reshaped parameters and
    the relevant eigengap.
    """
    m, _ = reshape_vector(flat)
    n = m.shape[0]
    _check_rank(k, n)
    if e_phi_hat.shape != (n, k):
        raise ShapeMismatch(f"Reference basis must be {(n, k)}, got {e_phi_hat.shape}.")

    eigenvalues, eigenvectors = symmetric_spectrum(m)
    aligned, signs = align_signs(eigenvectors[:, :k], e_phi_hat)
    residual = aligned.T @ e_phi_hat - np.eye(k)
    loss = float(np.linalg.norm(residual))

    gap = eigengap(eigenvalues, k)
    if gap < EIGENGAP_TOLERANCE:
        return loss, None, eigenvalues, gap
    if loss == 0.0:
        return loss, np.zeros(flat.size), eigenvalues, gap

    # dL/dC for C = Ê_θᵀ Ê_φ with row signs held fixed.
    grad_cross = signs[:, None] * residual / loss
    grad_basis = e_phi_hat @ grad_cross.T

    # First-order eigenvector perturbation of the symmetric part.
    differences = eigenvalues[None, :k] - eigenvalues[:, None]
    factors = np.zeros((n, k))
    off_diagonal = ~np.eye(n, k, dtype=bool)
    factors[off_diagonal] = 1.0 / differences[off_diagonal]
    grad_symmetric = eigenvectors @ (factors * (eigenvectors.T @ grad_basis)) @ (
        eigenvectors[:, :k].T
    )
    grad_matrix = (grad_symmetric + grad_symmetric.T) / 2

    return loss, grad_matrix.ravel()[: flat.size], eigenvalues, gap


def dr_grad(theta: ClassifierModel, phi: ClassifierModel, k: int) -> Vector:
    _check_pair(theta, phi)
    e_phi_hat = significant_eigvecs(reshape_params(phi), k)
    _, grad, _, gap = directional_loss_and_grad(theta.flat_parameters(), e_phi_hat, k)
    if grad is None:
        raise DegenerateSpectrum(
            f"Eigengap {gap:.3g} is below {EIGENGAP_TOLERANCE:g}; "
            "skip the directional term for this step.",
            gap,
        )
    return grad


def total_loss(
    theta: ClassifierModel,
    batch: tuple[Matrix, IndexArray],
    phi: ClassifierModel | None,
    dr_weight: float,
    k: int | None,
) -> float:
    x, labels = batch
    loss = cross_entropy(theta, x, labels)
    if dr_weight == 0:
        return loss
    if phi is None or k is None:
        raise ValidationError("A positive dr_weight needs a reference model and rank.")
    return loss + dr_weight * dr_loss(theta, phi, k)


class Regularizer(Module):
    def __init__(self, manager: ExperimentManager):
        self.manager = manager

    @staticmethod
    @wraps(reshape_params)
    def reshape(model: ClassifierModel) -> Matrix:
        return reshape_params(model)

    @staticmethod
    @wraps(significant_eigvecs)
    def eigvecs(m: Matrix, k: int) -> Matrix:
        return significant_eigvecs(m, k)

    @staticmethod
    @wraps(dr_context)
    def context(theta: ClassifierModel, phi: ClassifierModel, k: int) -> DRContext:
        return dr_context(theta, phi, k)

    @staticmethod
    @wraps(dr_loss)
    def loss(theta: ClassifierModel, phi: ClassifierModel, k: int) -> float:
        return dr_loss(theta, phi, k)

    @staticmethod
    @wraps(dr_grad)
    def grad(theta: ClassifierModel, phi: ClassifierModel, k: int) -> Vector:
        return dr_grad(theta, phi, k)

    @staticmethod
    @wraps(total_loss)
    def total_loss(
        theta: ClassifierModel,
        batch: Sequence,
        phi: ClassifierModel | None,
        dr_weight: float,
        k: int | None,
    ) -> float:
        return total_loss(theta, batch, phi, dr_weight, k)
