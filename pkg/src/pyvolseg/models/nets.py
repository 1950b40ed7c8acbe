from pydantic import BaseModel


class UNetConfig(BaseModel):
    in_channels: int = 1
    num_classes: int = 4
    depth: int = 3
    base_channels: int = 16
    kernel: int = 3

    def channels(self, level: int) -> int:
        return self.base_channels * 2**level

    @property
    def size_multiple(self) -> int:
        """Spatial dims of the input must be divisible by this."""
        return 2 ** (self.depth - 1)


class DiscConfig(BaseModel):
    in_channels: int = 2
    channels: tuple[int, ...] = (16, 32, 64, 128)
    slope: float = 0.2
    head_std: float = 0.01


class PartialLoadReport(BaseModel):
    """Outcome of loading a checkpoint into a differently shaped network."""

    transferred: list[str]
    reinitialized: list[str]
    ignored: list[str]
    """Checkpoint entries with no counterpart in the target network."""

    def to_string(self) -> str:
        lines = [f"transferred {name}" for name in self.transferred]
        lines += [f"reinitialized {name}" for name in self.reinitialized]
        lines += [f"ignored {name}" for name in self.ignored]
        return "\n".join(lines) + "\n"
