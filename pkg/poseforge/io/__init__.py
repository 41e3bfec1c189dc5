"""Input/Output handlers for scenes, models, feature clouds and predictions."""

from poseforge.io.feature_files import load_feature_cloud, save_feature_cloud
from poseforge.io.handlers import DataHandler

__all__ = ["DataHandler", "load_feature_cloud", "save_feature_cloud"]
