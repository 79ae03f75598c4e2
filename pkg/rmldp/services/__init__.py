"""Services module for rmldp."""

from .experiment import ExperimentReport, ExperimentService
from .verification import VerificationService

__all__ = ["ExperimentReport", "ExperimentService", "VerificationService"]
