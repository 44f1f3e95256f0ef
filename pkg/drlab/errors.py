"""Typed errors raised across drlab.

Category bases decide how the CLI reports a failure: ``ValidationError``
exits with code 2 and ``ArtifactError`` with code 3.
"""
from typing import Any, Optional


class DrLabError(Exception):
    """Root of every error raised by drlab."""


class ValidationError(DrLabError):
    pass


class ArtifactError(DrLabError):
    pass


# --- simulation -----------------------------------------------------------

class SimulationError(DrLabError):
    pass


class UnknownEnv(ValidationError):
    pass


class UnknownParameter(ValidationError):
    pass


class OutOfValidRange(ValidationError):
    pass


class IntervalOutsideValidRange(ValidationError):
    pass


class DimensionMismatch(SimulationError):
    pass


class SteppedAfterTermination(SimulationError):
    pass


class EnvironmentNotReset(SimulationError):
    pass


# --- reward language ------------------------------------------------------

class RewardError(DrLabError):
    pass


class RewardSyntaxError(RewardError, ValidationError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownFeature(RewardError, ValidationError):
    def __init__(self, name: str):
        super().__init__(f"unknown feature '{name}'")
        self.name = name


class NonFiniteConstant(RewardError, ValidationError):
    pass


class UnboundedExpression(RewardError, ValidationError):
    pass


class MissingFeature(RewardError):
    def __init__(self, name: str):
        super().__init__(f"feature '{name}' missing from evaluation input")
        self.name = name


class DivisionNearZero(RewardError):
    pass


class InvalidSqrtArgument(RewardError):
    pass


class NonFiniteResult(RewardError):
    pass


class EmptyTrace(RewardError):
    pass


# --- training -------------------------------------------------------------

class TrainingError(DrLabError):
    pass


class LengthMismatch(TrainingError, ValidationError):
    pass


class DivergedTraining(TrainingError):
    def __init__(self, message: str, log: Optional[Any] = None):
        super().__init__(message)
        self.log = log


class NonFiniteGradient(TrainingError):
    pass


# --- reward search --------------------------------------------------------

class SearchError(DrLabError):
    pass


class NoValidCandidate(SearchError):
    pass


class MissingScore(SearchError):
    pass


class AllCandidatesFailed(SearchError):
    pass


# --- physics prior and DR synthesis --------------------------------------

class NominalFailure(SearchError):
    def __init__(self, message: str, nominal_fitness: float):
        super().__init__(message)
        self.nominal_fitness = nominal_fitness


class EmptyParameterSet(ValidationError):
    pass


class MissingBlock(ValidationError):
    pass


class MalformedInterval(ValidationError):
    pass


class OutOfRappBounds(ValidationError):
    pass


class EmptyAfterClamp(ValidationError):
    pass


class MissingBounds(ValidationError):
    pass


class AllProposalsFailed(SearchError):
    pass


# --- black-box optimizers -------------------------------------------------

class OptimizerError(DrLabError):
    pass


class NonPositiveHyperparameter(OptimizerError, ValidationError):
    pass


class FactorizationFailure(OptimizerError):
    pass


class NegativeVariance(OptimizerError, ValidationError):
    pass


class EliteCountExceedsSamples(OptimizerError, ValidationError):
    pass


# --- proposal transport ---------------------------------------------------

class TransportError(DrLabError):
    pass


class RateLimited(TransportError):
    pass


class EmptyCompletion(TransportError):
    pass


class PlaybookExhausted(TransportError):
    def __init__(self, role: str, request_index: int):
        super().__init__(f"playbook has no '{role}' response for request #{request_index}")
        self.role = role
        self.request_index = request_index


# --- pipeline -------------------------------------------------------------

class MissingArtifact(ArtifactError):
    def __init__(self, name: str):
        super().__init__(f"missing upstream artifact '{name}'")
        self.name = name


class TamperedArtifact(ArtifactError):
    pass


class EmptyRun(ArtifactError):
    pass
