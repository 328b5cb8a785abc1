from typing import Any, List, Union

_dot_dict_state_field_name = '_DotDict__dot_dict_state_5c1f0e7a'


def _join_path(path: str, key) -> str:
    if isinstance(key, int):
        return f'{path}[{key}]'

    return f'{path}.{key}' if path else str(key)


def _wrap(value, path: str):
    if isinstance(value, dict):
        return DotDict(value, path)

    elif isinstance(value, list):
        return [_wrap(el, _join_path(path, idx)) for idx, el in enumerate(value)]

    else:
        return value


class DotDict:
    """
    Read-only attribute access to a resolved configuration tree.

    Missing keys raise KeyError carrying the full dotted path, which is what users see when a
    command reads a setting that is not there.

    Example:

            >>> cfg = as_dot_dict({'attack': {'alpha': 0.7}}, 'config')
            >>> cfg.attack.alpha
            0.7

    """

    def __init__(self, data: dict, path: str = ''):
        # name unlikely to collide with a config key
        self.__dot_dict_state_5c1f0e7a = (data, path)

    @property
    def _data(self) -> dict:
        return getattr(self, _dot_dict_state_field_name)[0]

    @property
    def _path(self) -> str:
        return getattr(self, _dot_dict_state_field_name)[1]

    def __contains__(self, item):
        return item in self._data

    def __getattr__(self, item):
        if item.startswith('__'):
            raise AttributeError(item)

        data, path = getattr(self, _dot_dict_state_field_name)
        try:
            return _wrap(data[item], _join_path(path, item))
        except KeyError:
            raise KeyError(_join_path(path, item))

    def __setattr__(self, key, value):
        if key != _dot_dict_state_field_name:
            raise AttributeError(f'Configuration is read-only: {_join_path(self._path, key)}')

        super().__setattr__(key, value)

    def __getitem__(self, item):
        return self.__getattr__(item)

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)

    def get(self, key: str, default: Any = None):
        return self[key] if key in self._data else default

    def lookup(self, dotted_key: str):
        """
        Resolves a dotted key such as `attack.eot.scale` relative to this node.
        """
        node = self
        for part in dotted_key.split('.'):
            node = node[part]

        return node

    def __repr__(self):
        return f'DotDict({self._path or "<root>"}: {self._data!r})'

    def __eq__(self, other):
        """
        Data is compared, the path is ignored.
        """
        if isinstance(other, DotDict):
            return self._data == other._data

        return self._data == other


def as_dot_dict(dict_data: dict, variable_name: str = '') -> DotDict:
    return DotDict(dict_data, variable_name)


def unwrap_dot_dict(wrapped_data: Union[DotDict, List, Any]) -> Union[dict, List, Any]:
    if isinstance(wrapped_data, DotDict):
        # noinspection PyProtectedMember
        return wrapped_data._data

    elif isinstance(wrapped_data, list):
        return [unwrap_dot_dict(el) for el in wrapped_data]

    else:
        return wrapped_data
