"""Exception types raised by the integer kernels, the simulator and the file codec."""


class AccumulatorOverflowError(OverflowError):
    """An integer MAC chain exceeded the 32-bit signed accumulator range."""


class ExpUnderflowError(ArithmeticError):
    """Every exponential in an attention row underflowed to zero."""


class BufferOverflowError(RuntimeError):
    """More data was pushed into a hardware buffer than its capacity allows."""


class QTFormatError(ValueError):
    """Malformed ``.qt`` tensor file.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
