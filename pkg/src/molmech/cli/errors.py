"""Typed failures mapped to process exit codes."""

from __future__ import annotations


class CliError(Exception):
    exit_code = 1


class ConfigError(CliError):
    exit_code = 2


class DataError(CliError):
    exit_code = 3


class NumericError(CliError):
    exit_code = 4
