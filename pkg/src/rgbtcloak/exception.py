class IllegalStateException(Exception):

    def __init__(self, *args: object) -> None:
        super().__init__(*args)


class IllegalArgumentException(Exception):

    def __init__(self, *args: object) -> None:
        super().__init__(*args)


class ShapeMismatchException(IllegalArgumentException):

    def __init__(self, message: str, *shapes) -> None:
        shapes_formatted = ' vs '.join(str(tuple(s)) for s in shapes)
        super().__init__(f'{message}: {shapes_formatted}' if shapes else message)
        self.shapes = [tuple(s) for s in shapes]


class UnsupportedOperationException(IllegalArgumentException):

    def __init__(self, *args: object) -> None:
        super().__init__(*args)


class NonFiniteValueException(IllegalStateException):

    def __init__(self, message: str, iteration: int = None) -> None:
        super().__init__(message if iteration is None else f'{message} (iteration {iteration})')
        self.iteration = iteration


class ConfigException(IllegalArgumentException):

    def __init__(self, message: str, key: str = None, line: int = None) -> None:
        location = ''
        if key:
            location += f' [key: {key}]'
        if line is not None:
            location += f' [line: {line}]'

        super().__init__(f'{message}{location}')
        self.key = key
        self.line = line


class ModelFormatException(IllegalStateException):

    def __init__(self, *args: object) -> None:
        super().__init__(*args)


class AcceptanceFloorException(IllegalStateException):

    def __init__(self, message: str, metrics: dict = None) -> None:
        super().__init__(message)
        self.metrics = metrics or {}
