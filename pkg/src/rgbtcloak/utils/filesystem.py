import os
from typing import AnyStr, List

from rgbtcloak.exception import IllegalArgumentException


def ls(*path_segments: str, suffix: str = '') -> List[str]:
    """
    Sorted full paths of the regular files in a directory, optionally filtered by name suffix.
    Sorting keeps dataset ingestion independent of the platform's listing order.
    """
    path = os.path.join(*path_segments)
    if not os.path.isdir(path):
        raise IllegalArgumentException(f'Not a directory: {path}')

    return sorted(
        os.path.join(path, file_name) for file_name in os.listdir(path)
        if file_name.endswith(suffix) and os.path.isfile(os.path.join(path, file_name))
    )


def ensure_dir(*path_segments: str) -> str:
    path = os.path.join(*path_segments)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as ex:
        raise IllegalArgumentException(f'Cannot create output directory {path}: {ex}')

    return path


def write_to_file(file_path: str, data: AnyStr, open_mode='w', encoding='utf-8') -> None:
    effective_encoding = encoding if 'b' not in open_mode else None
    # newline='' keeps output bytes identical across platforms
    newline = '' if 'b' not in open_mode else None
    with open(file_path, open_mode, encoding=effective_encoding, newline=newline) as f:
        f.write(data)


def read_file(file_path: str, encoding='utf-8') -> str:
    with open(file_path, 'r', encoding=encoding) as f:
        return f.read()


def read_file_bin(file_path: str) -> bytes:
    with open(file_path, 'rb') as f:
        return f.read()
