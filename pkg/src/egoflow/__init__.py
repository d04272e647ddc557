"""egoflow: egocentric hand demonstrations to a chunked bimanual gripper policy."""

__version__ = "0.1.0"
