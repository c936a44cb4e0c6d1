class MeshtokException(Exception):
    def __init__(self, message):
        super().__init__(message)


# rejected input: non-finite values, out-of-range indices, shape mismatches
class InvalidInputException(MeshtokException):
    def __init__(self, message):
        super().__init__(message)


class TopologyMismatchException(InvalidInputException):
    def __init__(self, message):
        super().__init__(message)


class NonFiniteLogitsException(InvalidInputException):
    def __init__(self, message):
        super().__init__(message)


class ConfigurationException(MeshtokException):
    def __init__(self, message):
        super().__init__(message)


class FingerprintMismatchException(ConfigurationException):
    def __init__(self, message):
        super().__init__(message)


class TrainingDivergedException(MeshtokException):
    def __init__(self, message, last_good_checkpoint=None):
        super().__init__(message)
        self.last_good_checkpoint = last_good_checkpoint


class UsageException(MeshtokException):
    def __init__(self, message):
        super().__init__(message)
