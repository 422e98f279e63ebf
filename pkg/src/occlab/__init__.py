"""Semantic occupancy label generation toolkit.

Modules:
  core        geometric/semantic domain types and rigid transforms
  projection  pinhole projection, label transfer, map aggregation
  tracks      BEV rasters, keyframe interpolation, object placement
  refine      ground extraction, per-frame clustering, voxel voting
  voxel       grid geometry and ray-cast visibility
  events      event parsing and tensor representations
  elm         fusion/attention kernels with analytic gradients
  corrupt     deterministic image degradations
  metrics     confusion accumulation and IoU scores
  formats     file formats
  pipeline    end-to-end label generation
  service     annotation HTTP API
"""

__version__ = "0.1.0"
