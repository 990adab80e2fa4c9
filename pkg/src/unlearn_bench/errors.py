"""Exception types shared across the benchmark."""

from __future__ import annotations


class InvalidInputError(ValueError):
    """An argument violates an operation's input contract."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss; the message names the epoch."""


class DegenerateSpectrumError(RuntimeError):
    """The top two covariance eigenvalues are too close to pick a dominant one."""


class DuplicateMethodError(ValueError):
    """An unlearning method name is already registered."""


class UnknownMethodError(KeyError):
    """Lookup of an unregistered unlearning method; message lists known names."""


class StorageError(RuntimeError):
    """Base class for artifact-store failures."""


class ArtifactNotFoundError(StorageError):
    """A requested artifact key does not exist in the store."""


class CorruptArtifactError(StorageError):
    """An artifact's bytes do not match the digest recorded in the manifest."""


class ArchitectureMismatchError(StorageError):
    """A checkpoint was loaded against an incompatible architecture."""


class ManifestVersionError(StorageError):
    """The on-disk manifest uses an unsupported format version."""
