from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .datfile import emit_dat, format_dat, read_dat
from .figures import FIGURES, figure_configs, reproduce_figure
from .runner import Point, ResultRecord, run

__all__ = ["ConfigError", "ExperimentConfig", "dump_config", "load_config", "emit_dat",
           "format_dat", "read_dat", "FIGURES", "figure_configs", "reproduce_figure", "Point",
           "ResultRecord", "run"]
