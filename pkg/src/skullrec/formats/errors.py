"""Parse errors. Every parser failure is a :class:`VolumeIOError`."""


class VolumeIOError(ValueError):
    pass


class MalformedHeader(VolumeIOError):
    pass


class UnsupportedFeature(VolumeIOError):
    pass


class PayloadSizeMismatch(VolumeIOError):
    pass


class BadMagic(VolumeIOError):
    pass


class UnsupportedDatatype(VolumeIOError):
    pass


class TruncatedPayload(VolumeIOError):
    pass
