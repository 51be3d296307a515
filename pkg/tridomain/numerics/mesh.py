"""
Axisymmetric finite-volume grid over the cylindrical nerve, 0 <= r <= R, 0 <= z <= L.

Cells are numbered p = l*Nr + j with l the axial and j the radial index.
Faces are stored as flat arrays. Each face has a left and a right cell; the positive flux direction is from left to right
(outward in r, upward in z). A missing neighbour outside the domain is -1. The axis r = 0 has zero area and carries no face.
"""
import enum
import logging

import numpy as np
from scipy import sparse

log = logging.getLogger(__name__)

class MeshError(ValueError):
	pass

class FaceTag(enum.IntEnum):
	INTERIOR = 0
	SEALED = 1
	BATH = 2

class Mesh:
	"""A uniform tensor-product grid in (r, z) with axisymmetric volumes and face areas."""
	def __init__(self, R, L, Nr, Nz, bath=True):
		if Nr < 1 or Nz < 2:
			raise MeshError("Need Nr >= 1 and Nz >= 2, got Nr=%s, Nz=%s" % (Nr, Nz))
		if not (R > 0 and L > 0):
			raise MeshError("Need R > 0 and L > 0, got R=%s, L=%s" % (R, L))
		self.R = R
		self.L = L
		self.Nr = Nr
		self.Nz = Nz
		self.bath = bath
		self.n_cells = Nr * Nz
		self.r_faces = np.linspace(0.0, R, Nr + 1)
		self.z_faces = np.linspace(0.0, L, Nz + 1)
		self.dr = np.diff(self.r_faces)
		self.dz = np.diff(self.z_faces)
		self.r_centers = 0.5 * (self.r_faces[1:] + self.r_faces[:-1])
		self.z_centers = 0.5 * (self.z_faces[1:] + self.z_faces[:-1])

		ring_areas = np.pi * (self.r_faces[1:] ** 2 - self.r_faces[:-1] ** 2)
		self.volumes = np.outer(self.dz, ring_areas).ravel()
		self.cell_r = np.tile(self.r_centers, Nz)
		self.cell_z = np.repeat(self.z_centers, Nr)
		self._build_faces(ring_areas)
		self._build_operators()

	def _build_faces(self, ring_areas):
		Nr, Nz = self.Nr, self.Nz
		cells = np.arange(self.n_cells).reshape(Nz, Nr)
		outside = -np.ones(Nr, dtype=int)
		left, right, area, distance, axial = [], [], [], [], []

		def add(l, r, a, d, is_axial):
			l, r = np.broadcast_arrays(np.asarray(l, dtype=int), np.asarray(r, dtype=int))
			left.append(l.ravel())
			right.append(r.ravel())
			area.append(np.broadcast_to(a, l.shape).ravel())
			distance.append(np.broadcast_to(d, l.shape).ravel())
			axial.append(np.full(l.size, is_axial))

		# radial faces between neighbouring rings, then the lateral surface
		if Nr > 1:
			lateral = 2 * np.pi * np.outer(self.dz, self.r_faces[1:-1])
			add(cells[:, :-1], cells[:, 1:], lateral, np.outer(np.ones(Nz), 0.5 * (self.dr[:-1] + self.dr[1:])), False)
		add(cells[:, -1], -1, 2 * np.pi * self.R * self.dz, 0.5 * self.dr[-1], False)
		# axial faces: bottom end disk, between slabs, top end disk
		add(outside, cells[0], ring_areas, 0.5 * self.dz[0], True)
		add(cells[:-1], cells[1:], np.outer(np.ones(Nz - 1), ring_areas), np.outer(0.5 * (self.dz[:-1] + self.dz[1:]), np.ones(Nr)), True)
		add(cells[-1], outside, ring_areas, 0.5 * self.dz[-1], True)

		self.face_left = np.concatenate(left)
		self.face_right = np.concatenate(right)
		self.face_area = np.concatenate(area)
		self.face_distance = np.concatenate(distance)
		self.face_axial = np.concatenate(axial)
		self.face_exterior = (self.face_left < 0) | (self.face_right < 0)
		self.n_faces = self.face_left.size
		self.face_tags = np.where(self.face_exterior, FaceTag.BATH if self.bath else FaceTag.SEALED, FaceTag.INTERIOR)

	def _build_operators(self):
		faces = np.arange(self.n_faces)
		has_left = self.face_left >= 0
		has_right = self.face_right >= 0
		# divergence: flux leaves the left cell and enters the right one
		rows = np.concatenate([self.face_left[has_left], self.face_right[has_right]])
		cols = np.concatenate([faces[has_left], faces[has_right]])
		values = np.concatenate([
			self.face_area[has_left] / self.volumes[self.face_left[has_left]],
			-self.face_area[has_right] / self.volumes[self.face_right[has_right]],
		])
		self.div_matrix = sparse.csr_matrix((values, (rows, cols)), shape=(self.n_cells, self.n_faces))

		# interior two-point differences
		interior = has_left & has_right
		inv_d = 1 / self.face_distance
		rows = np.concatenate([faces[interior], faces[interior]])
		cols = np.concatenate([self.face_right[interior], self.face_left[interior]])
		values = np.concatenate([inv_d[interior], -inv_d[interior]])
		self.grad_matrix = sparse.csr_matrix((values, (rows, cols)), shape=(self.n_faces, self.n_cells))

		# one-sided differences against a boundary value on exterior faces
		rows = np.concatenate([faces[has_left & ~has_right], faces[has_right & ~has_left]])
		cols = np.concatenate([self.face_left[has_left & ~has_right], self.face_right[has_right & ~has_left]])
		values = np.concatenate([-inv_d[has_left & ~has_right], inv_d[has_right & ~has_left]])
		self.boundary_grad_matrix = sparse.csr_matrix((values, (rows, cols)), shape=(self.n_faces, self.n_cells))
		self.boundary_grad_weight = np.where(has_left & ~has_right, inv_d, np.where(has_right & ~has_left, -inv_d, 0.0))

	@property
	def bath_faces(self):
		return self.face_tags == FaceTag.BATH

	def divergence(self, flux, axial_only=False):
		"""
		Return the finite-volume divergence (sum over faces of flux*area)/volume per cell.
		With axial_only, radial faces are ignored, as for transport inside the axons.
		Raise MeshError if there is not exactly one flux value per face.
		"""
		flux = np.asarray(flux, dtype=float)
		if flux.shape != (self.n_faces,):
			raise MeshError("Expected %i face values, got shape %s" % (self.n_faces, flux.shape))
		if axial_only:
			flux = np.where(self.face_axial, flux, 0.0)
		return self.div_matrix @ flux

	def gradient_along_faces(self, field, boundary_value=None):
		"""
		Return (u_right - u_left)/distance on every face.
		Exterior faces use `boundary_value` on the outer side when the mesh is bathed, and are zero otherwise.
		"""
		field = np.asarray(field, dtype=float)
		if field.shape != (self.n_cells,):
			raise MeshError("Expected %i cell values, got shape %s" % (self.n_cells, field.shape))
		grad = self.grad_matrix @ field
		if boundary_value is not None and self.bath:
			grad = grad + self.boundary_grad_matrix @ field + self.boundary_grad_weight * boundary_value
		return grad

	def locate(self, r, z):
		"""Return the index of the cell containing the point (r, z)."""
		if not (0 <= r <= self.R and 0 <= z <= self.L):
			raise MeshError("Point (%g, %g) lies outside the mesh" % (r, z))
		j = min(int(np.searchsorted(self.r_faces, r, side="right")) - 1, self.Nr - 1)
		l = min(int(np.searchsorted(self.z_faces, z, side="right")) - 1, self.Nz - 1)
		return l * self.Nr + j

def build_mesh(R, L, Nr, Nz, bath=True):
	mesh = Mesh(R, L, Nr, Nz, bath=bath)
	log.debug("Built %ix%i mesh with %i faces, bath=%s", Nr, Nz, mesh.n_faces, bath)
	return mesh
