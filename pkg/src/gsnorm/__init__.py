"""Growth-stage-normalized crop-type classification on satellite-style time series."""

__version__ = "0.1.0"

CLASS_NAMES = ("other", "corn", "soybean")
OTHER, CORN, SOYBEAN = 0, 1, 2
MASKED = 255

# Classifier input channels, in x_lstm row order.
CHANNELS = ("BLUE", "GREEN", "RED", "NIR", "SWIR1", "SWIR2", "NDWI", "LSWI", "VV", "VH")
