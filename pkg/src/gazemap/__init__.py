"""GPS + OpenStreetMap to heading-up map patches, map/scene fusion forward
passes, and saliency evaluation for driver-gaze prediction."""

__version__ = "0.1.0"
BUILD_ID = f"gazemap {__version__}"
