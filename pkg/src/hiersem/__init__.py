"""Hierarchical RGBD segmentation with random-forest semantic instance labeling.

Pipeline: depth + color -> point cloud -> integral-image normals ->
graph over-segmentation -> histogram dendrogram and tree cut -> region
features -> random forest -> per-pixel classes and instances.
"""

__version__ = "0.1.0"
