from respec.utility.setting import settings, get_settings
from respec.utility.LogMaker import logger, setup_logging, log_message, log_error_message, log_config_message, log_stats_message, get_error
