"""Sensor stream I/O and the synthetic-run simulator."""

from .simulator import SimScene, corridor_scene, load_scene, scene_from_dict, simulate
from .streams import (GprMeta, GroundTruth, ImuStream, SchemaConfig, SensorStreams, WheelStream,
                      export_streams, ingest_dataset)

__all__ = [
    "GprMeta", "GroundTruth", "ImuStream", "SchemaConfig", "SensorStreams", "SimScene", "WheelStream",
    "corridor_scene", "export_streams", "ingest_dataset", "load_scene", "scene_from_dict", "simulate",
]
