import os
import sys
import json
import logging
import traceback
from datetime import datetime
from logging.handlers import RotatingFileHandler, TimedRotatingFileHandler
from typing import Any, Dict, List, Optional

from src.core.constants import (
    APP_NAME,
    DEFAULT_LOG_DIR,
    ERROR_LOG_BACKUP_DAYS,
    EXIT_CONFIG_ERROR,
    EXIT_NUMERICAL_FAILURE,
    EXIT_UNEXPECTED,
    LOG_BACKUP_COUNT,
    LOG_MAX_BYTES,
)


class Misr4dError(Exception):
    """Base class for every error raised deliberately by the toolkit."""

    exit_code = EXIT_UNEXPECTED


class ConfigError(Misr4dError, ValueError):
    """Invalid configuration, manifest, recipe or command-line input."""

    exit_code = EXIT_CONFIG_ERROR


class DataError(Misr4dError, ValueError):
    """Input data violates a precondition (empty cube, non unit-flux patterns, dead view...)."""

    exit_code = EXIT_CONFIG_ERROR


class ShapeError(DataError):
    """Array or tensor shapes do not satisfy an operation's contract."""


class NumericalError(Misr4dError, ArithmeticError):
    """A computation produced non-finite values."""

    exit_code = EXIT_NUMERICAL_FAILURE


class ErrorHandler:
    """Logging setup and exception reporting for the command-line tool."""

    def __init__(self, app_name: str = APP_NAME, log_dir: str = DEFAULT_LOG_DIR,
                 log_level: int = logging.INFO, logger_name: str = "src",
                 install_excepthook: bool = True):
        """
        Args:
            app_name (str): Prefix of the log files
            log_dir (str): Directory holding the log files
            log_level (int): Logging level for every handler
            logger_name (str): Logger the handlers are attached to; module loggers propagate to it
            install_excepthook (bool): Route uncaught exceptions through handle_exception
        """
        self.app_name = app_name
        self.log_dir = log_dir
        self.log_level = log_level
        self.logger_name = logger_name
        self.logger: Optional[logging.Logger] = None
        self._handlers: List[logging.Handler] = []

        os.makedirs(log_dir, exist_ok=True)
        self._setup_logging()

        if install_excepthook:
            sys.excepthook = self.handle_exception

    def _setup_logging(self):
        self.logger = logging.getLogger(self.logger_name)
        self.logger.setLevel(self.log_level)
        for handler in list(self.logger.handlers):
            self.logger.removeHandler(handler)

        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(module)s.%(funcName)s:%(lineno)d - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )

        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setFormatter(formatter)
        self._add_handler(console_handler)

        file_handler = RotatingFileHandler(
            os.path.join(self.log_dir, f"{self.app_name}.log"),
            maxBytes=LOG_MAX_BYTES,
            backupCount=LOG_BACKUP_COUNT,
            encoding='utf-8'
        )
        file_handler.setFormatter(formatter)
        self._add_handler(file_handler)

        # errors only, rotated daily
        error_file_handler = TimedRotatingFileHandler(
            os.path.join(self.log_dir, f"{self.app_name}_errors.log"),
            when='midnight',
            interval=1,
            backupCount=ERROR_LOG_BACKUP_DAYS,
            encoding='utf-8'
        )
        error_file_handler.setFormatter(formatter)
        self._add_handler(error_file_handler, level=logging.ERROR)

        json_file_handler = RotatingFileHandler(
            os.path.join(self.log_dir, f"{self.app_name}_json.log"),
            maxBytes=LOG_MAX_BYTES,
            backupCount=LOG_BACKUP_COUNT,
            encoding='utf-8'
        )
        json_file_handler.setFormatter(JSONFormatter())
        self._add_handler(json_file_handler)

    def _add_handler(self, handler: logging.Handler, level: Optional[int] = None) -> None:
        handler.setLevel(self.log_level if level is None else level)
        self.logger.addHandler(handler)
        self._handlers.append(handler)

    def handle_exception(self, exc_type: type, exc_value: BaseException, exc_traceback: Any,
                         module: Optional[str] = None):
        """
        Log an exception that escaped every deliberate handler, with its traceback.

        Args:
            exc_type (type): Exception class
            exc_value (BaseException): Exception instance
            exc_traceback (Any): Traceback object
            module (Optional[str]): Command or component that was running
        """
        if issubclass(exc_type, KeyboardInterrupt):
            sys.__excepthook__(exc_type, exc_value, exc_traceback)
            return

        self.logger.error("Unhandled exception: %s: %s", exc_type.__name__, exc_value,
                          exc_info=(exc_type, exc_value, exc_traceback), extra=self._extra(module, None))

    def log_error(self, message: str, exc_info: Optional[Any] = None,
                  module: Optional[str] = None, extra: Optional[Dict[str, Any]] = None):
        """
        Log an error message, optionally with exception information.

        Args:
            message (str): Message text
            exc_info (Optional[Any]): Exception instance or (type, value, traceback) tuple
            module (Optional[str]): Logical module the error belongs to
            extra (Optional[Dict[str, Any]]): Additional fields for the JSON log
        """
        if isinstance(exc_info, BaseException):
            exc_info = (type(exc_info), exc_info, exc_info.__traceback__)
        self.logger.error(message, exc_info=exc_info, extra=self._extra(module, extra))

    def log_warning(self, message: str, module: Optional[str] = None,
                    extra: Optional[Dict[str, Any]] = None):
        self.logger.warning(message, extra=self._extra(module, extra))

    def log_info(self, message: str, module: Optional[str] = None,
                 extra: Optional[Dict[str, Any]] = None):
        self.logger.info(message, extra=self._extra(module, extra))

    def log_debug(self, message: str, module: Optional[str] = None,
                  extra: Optional[Dict[str, Any]] = None):
        self.logger.debug(message, extra=self._extra(module, extra))

    @staticmethod
    def _extra(module: Optional[str], extra: Optional[Dict[str, Any]]) -> Dict[str, Any]:
        # 'module' is a reserved LogRecord attribute
        payload: Dict[str, Any] = {}
        if module:
            payload['component'] = module
        if extra:
            payload.update(extra)
        return {'extra_fields': payload} if payload else {}

    @staticmethod
    def exit_code_for(exc: BaseException) -> int:
        """Process exit code for an exception: 2 for config/data errors, 3 for numerical failures."""
        if isinstance(exc, Misr4dError):
            return exc.exit_code
        return EXIT_UNEXPECTED

    def close(self):
        """Release logging resources so log files can be removed."""
        if not self.logger:
            return
        for handler in list(self._handlers):
            try:
                self.logger.removeHandler(handler)
                handler.close()
            except Exception:
                pass
        self._handlers.clear()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


class JSONFormatter(logging.Formatter):
    """One JSON object per log record."""

    def format(self, record):
        log_object = {
            'timestamp': datetime.fromtimestamp(record.created).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'module': record.module,
            'function': record.funcName,
            'line': record.lineno,
            'message': record.getMessage()
        }

        if record.exc_info:
            log_object['exception'] = {
                'type': record.exc_info[0].__name__,
                'message': str(record.exc_info[1]),
                'traceback': traceback.format_exception(*record.exc_info)
            }

        extra_fields = getattr(record, 'extra_fields', None)
        if extra_fields:
            log_object.update(extra_fields)

        return json.dumps(log_object, ensure_ascii=False, default=str)
