"""Runtime for custom code inside an isolated execution process.

Kept free of heavy imports: it is preloaded by the forkserver and imported by
every sandbox child. Scripts are a restricted Python subset: a fixed builtin
set, the ``math`` module, a read-only ``params`` mapping, and no imports.
"""

import ast
import builtins
import math
from types import MappingProxyType
from typing import Any

ENTRY_POINT = "custom_code"

SAFE_BUILTINS: dict[str, Any] = {
    name: getattr(builtins, name)
    for name in (
        "abs", "all", "any", "bool", "dict", "divmod", "enumerate", "filter",
        "float", "int", "isinstance", "len", "list", "map", "max", "min",
        "pow", "range", "reversed", "round", "set", "sorted", "sum", "tuple",
        "zip", "ArithmeticError", "Exception", "IndexError", "KeyError",
        "TypeError", "ValueError", "ZeroDivisionError",
    )
    if hasattr(builtins, name)
}

# name -> capability it would grant
FORBIDDEN_NAMES = {
    "open": "file",
    "input": "file",
    "io": "file",
    "pathlib": "file",
    "shutil": "file",
    "tempfile": "file",
    "glob": "file",
    "socket": "network",
    "ssl": "network",
    "http": "network",
    "urllib": "network",
    "requests": "network",
    "httpx": "network",
    "asyncio": "network",
    "subprocess": "process",
    "multiprocessing": "process",
    "threading": "process",
    "signal": "process",
    "ctypes": "process",
    "sys": "process",
    "os": "environment",
    "environ": "environment",
    "getenv": "environment",
    "putenv": "environment",
    "time": "clock",
    "datetime": "clock",
    "clock_settime": "clock",
    "settimeofday": "clock",
    "exec": "dynamic code",
    "eval": "dynamic code",
    "compile": "dynamic code",
    "globals": "dynamic code",
    "locals": "dynamic code",
    "vars": "dynamic code",
    "getattr": "dynamic code",
    "setattr": "dynamic code",
    "delattr": "dynamic code",
    "breakpoint": "dynamic code",
    "__import__": "import",
    "importlib": "import",
}


class ReturnTypeError(TypeError):
    pass


def find_entry_point(tree: ast.Module) -> ast.FunctionDef | None:
    found = None
    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)) and node.name == ENTRY_POINT:
            found = node
    return found


def entry_point_problem(tree: ast.Module) -> str | None:
    node = find_entry_point(tree)
    if node is None:
        return f"no top-level function {ENTRY_POINT} defined"
    if isinstance(node, ast.AsyncFunctionDef):
        return f"{ENTRY_POINT} must be a plain function"
    args = node.args
    positional = len(args.posonlyargs) + len(args.args)
    if positional != 1 or args.vararg or args.kwarg or args.kwonlyargs:
        return f"{ENTRY_POINT} must take exactly one argument"
    return None


def scan_capabilities(tree: ast.AST) -> list[str]:
    problems = []
    for node in ast.walk(tree):
        match node:
            case ast.Import() | ast.ImportFrom():
                problems.append(f"line {node.lineno}: import statements are not allowed")
            case ast.Name(id=name) if name in FORBIDDEN_NAMES:
                problems.append(
                    f"line {node.lineno}: {FORBIDDEN_NAMES[name]} capability via {name}"
                )
            case ast.Name(id=name) if name.startswith("__"):
                problems.append(f"line {node.lineno}: dunder name {name}")
            case ast.Attribute(attr=attr) if attr.startswith("_"):
                problems.append(f"line {node.lineno}: private attribute {attr}")
            case ast.Attribute(attr=attr) if attr in FORBIDDEN_NAMES:
                problems.append(
                    f"line {node.lineno}: {FORBIDDEN_NAMES[attr]} capability via .{attr}"
                )
    return problems


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def conform(value: Any) -> float | list[float]:
    """Apply the return-type rule: a finite number or a list of finite numbers."""
    if _is_number(value):
        if not math.isfinite(value):
            raise ReturnTypeError(f"non-finite result {value!r}")
        return float(value)
    if isinstance(value, (list, tuple)):
        out = []
        for i, item in enumerate(value):
            if not _is_number(item):
                raise ReturnTypeError(
                    f"element {i} is {type(item).__name__}, expected a number"
                )
            if not math.isfinite(item):
                raise ReturnTypeError(f"element {i} is non-finite ({item!r})")
            out.append(float(item))
        return out
    raise ReturnTypeError(
        f"returned {type(value).__name__}, expected a number or a list of numbers"
    )


def _freeze(value: Any) -> Any:
    if isinstance(value, dict):
        return MappingProxyType({k: _freeze(v) for k, v in value.items()})
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


def load_entry(source: str, params: dict[str, Any]):
    namespace: dict[str, Any] = {
        "__builtins__": SAFE_BUILTINS,
        "__name__": "custom_module",
        "math": math,
        "params": _freeze(params),
    }
    exec(compile(source, "<custom_code>", "exec"), namespace)
    entry = namespace.get(ENTRY_POINT)
    if not callable(entry):
        raise TypeError(f"{ENTRY_POINT} is not callable")
    return entry


def child_main(conn, source: str, inputs: list[list[float]], params: dict, memory_limit_mb):
    """Run ``custom_code`` on every input and send one reply tuple.

    Replies are ``("ok", [values], None)``, ``("fault", message, index)`` or
    ``("return_type", message, index)``.
    """
    try:
        if memory_limit_mb:
            import resource

            limit = memory_limit_mb * 1024 * 1024
            resource.setrlimit(resource.RLIMIT_AS, (limit, limit))
        try:
            entry = load_entry(source, params)
        except BaseException as exc:
            conn.send(("fault", f"{type(exc).__name__}: {exc}", None))
            return
        values = []
        for index, vector in enumerate(inputs):
            try:
                raw = entry(list(vector))
            except BaseException as exc:
                conn.send(("fault", f"{type(exc).__name__}: {exc}", index))
                return
            try:
                values.append(conform(raw))
            except ReturnTypeError as exc:
                conn.send(("return_type", str(exc), index))
                return
        conn.send(("ok", values, None))
    finally:
        conn.close()
