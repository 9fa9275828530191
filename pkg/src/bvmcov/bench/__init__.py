"""Experiment harness: configs, runs, reports and the command-line interface."""
