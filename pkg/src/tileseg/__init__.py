"""Collaborative 3D segmentation toolkit: seeded region growing on voxel
graphs, differential editing, tiled distribution, consensus and meshing."""

__version__ = "0.1.0"
