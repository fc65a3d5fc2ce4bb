class ReSpecError(Exception):
    exit_code = 1

    def __init__(self, msg="", *args, **kwargs):
        super().__init__(msg, *args, **kwargs)


class UsageError(ReSpecError):
    exit_code = 1

    def __init__(self, msg="", *args, **kwargs):
        super().__init__(f"[usage error] {msg}", *args, **kwargs)


class DataError(ReSpecError):
    exit_code = 2

    def __init__(self, msg="", *args, **kwargs):
        super().__init__(f"[data error] {msg}", *args, **kwargs)


class NumericError(ReSpecError):
    exit_code = 3

    def __init__(self, msg="", *args, **kwargs):
        super().__init__(f"[numeric error] {msg}", *args, **kwargs)


# 번들 포맷 오류
class BadMagic(DataError):
    def __init__(self, path="", found=b"", *args, **kwargs):
        super().__init__(f"{path}: bad magic {found!r}, expected b'RSPC'", *args, **kwargs)


class VersionUnsupported(DataError):
    def __init__(self, path="", version=None, *args, **kwargs):
        super().__init__(f"{path}: unsupported version {version}", *args, **kwargs)


class TruncatedFile(DataError):
    def __init__(self, path="", expected=0, found=0, *args, **kwargs):
        super().__init__(f"{path}: truncated, expected {expected} bytes, found {found}", *args, **kwargs)


class TrailingBytes(DataError):
    def __init__(self, path="", expected=0, found=0, *args, **kwargs):
        super().__init__(f"{path}: {found - expected} trailing bytes after the {expected}-byte payload", *args, **kwargs)


class CountMismatch(DataError):
    def __init__(self, path="", rows=0, lines=0, *args, **kwargs):
        super().__init__(f"{path}: manifest has {lines} lines but matrix has {rows} rows", *args, **kwargs)


class ManifestError(DataError):
    def __init__(self, path="", line_no=0, reason="", *args, **kwargs):
        super().__init__(f"{path}:{line_no}: {reason}", *args, **kwargs)


class ChecksumMismatch(DataError):
    def __init__(self, path="", expected="", found="", *args, **kwargs):
        super().__init__(f"{path}: checksum {found} does not match stored {expected}", *args, **kwargs)


class MissingMatrixFile(DataError):
    def __init__(self, path="", *args, **kwargs):
        super().__init__(f"{path}: matrix file referenced by bundle.json is missing", *args, **kwargs)


class BundlePairMismatch(DataError):
    def __init__(self, msg="", *args, **kwargs):
        super().__init__(f"paired bundles disagree: {msg}", *args, **kwargs)


class MissingAltEmbeddings(DataError):
    def __init__(self, record_id="", *args, **kwargs):
        super().__init__(
            f"record {record_id!r} has no alt_video/alt_text embeddings (pass --alt-video and --alt-text)",
            *args,
            **kwargs,
        )


class MissingModalityReferences(DataError):
    def __init__(self, task="", modality="", *args, **kwargs):
        super().__init__(f"task {task!r} has no {modality} references", *args, **kwargs)


class DimensionMismatch(DataError):
    def __init__(self, expected=None, found=None, where="", *args, **kwargs):
        msg = f"dimension mismatch: expected {expected}, found {found}"
        if where:
            msg = f"{where}: {msg}"
        super().__init__(msg, *args, **kwargs)


class EmptyCorpus(DataError):
    def __init__(self, which="", *args, **kwargs):
        super().__init__(f"{which} corpus is empty", *args, **kwargs)


# 수치 오류
class ZeroNorm(NumericError):
    def __init__(self, where="", norm=0.0, *args, **kwargs):
        super().__init__(f"{where}: vector norm {norm:.3e} is below 1e-6", *args, **kwargs)


class NonFiniteValue(NumericError):
    def __init__(self, where="", *args, **kwargs):
        super().__init__(f"{where}: contains NaN or infinite values", *args, **kwargs)


class EmptyInput(NumericError):
    def __init__(self, where="", *args, **kwargs):
        super().__init__(f"{where}: empty input", *args, **kwargs)


class POutOfRange(NumericError):
    def __init__(self, p=None, *args, **kwargs):
        super().__init__(f"quantile level {p} is outside [0, 1]", *args, **kwargs)


class DegenerateConcentration(NumericError):
    def __init__(self, resultant=1.0, where="", *args, **kwargs):
        super().__init__(
            f"{where}: mean resultant length {resultant!r} is too close to 1 (all points coincide); kappa diverges",
            *args,
            **kwargs,
        )


class NonPositiveKappa(NumericError):
    def __init__(self, kappa=0.0, *args, **kwargs):
        super().__init__(f"kappa must be > 0, got {kappa!r}", *args, **kwargs)


class KappaZero(NumericError):
    def __init__(self, task="", modality="text", *args, **kwargs):
        super().__init__(
            f"task {task!r}: estimated {modality} kappa is 0 (reference rows have zero resultant)",
            *args,
            **kwargs,
        )


class EmptyAfterExclusion(NumericError):
    def __init__(self, *args, **kwargs):
        super().__init__("no reference rows left after leave-one-out exclusion", *args, **kwargs)


class EigenFailure(NumericError):
    def __init__(self, msg="", *args, **kwargs):
        super().__init__(f"eigendecomposition failed: {msg}", *args, **kwargs)
