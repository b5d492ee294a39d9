from attrs import frozen

IDENTITY_ID = 'identity'


@frozen(order=True)
class TransformRef:
    """A registered transform at one of its magnitude levels."""

    transform_id: str
    magnitude_level: int | None = None

    @property
    def is_identity(self) -> bool:
        return self.transform_id == IDENTITY_ID

    def __str__(self) -> str:
        if self.magnitude_level is None:
            return self.transform_id
        return f"{self.transform_id}[{self.magnitude_level}]"


IDENTITY = TransformRef(IDENTITY_ID)
