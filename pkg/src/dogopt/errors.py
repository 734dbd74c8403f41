"""Exception hierarchy shared by every dogopt module."""


class DogoptError(Exception):
    """Base class for all analysis errors."""


class PlanError(DogoptError, ValueError):
    """Malformed plan document."""


class UnknownReference(PlanError):
    """A node input names neither a node nor a dataset."""


class CycleError(PlanError):
    pass


class ArityError(PlanError):
    pass


class SchemaError(PlanError):
    pass


class UnknownAttribute(SchemaError):
    def __init__(self, attribute, where=""):
        self.attribute = attribute
        self.where = where
        msg = f"unknown attribute {attribute!r}"
        super().__init__(f"{msg} in {where}" if where else msg)


class ExprSyntaxError(PlanError):
    pass


class MissingTarget(PlanError):
    pass


class OrderViolation(DogoptError):
    """A stage is scheduled before a stage whose target it reads."""


class PathExplosion(DogoptError):
    def __init__(self, count, cap):
        self.count = count
        self.cap = cap
        super().__init__(f"{count} paths exceed the cap of {cap}")


class MissingStat(DogoptError, KeyError):
    def __init__(self, ident, field=None):
        self.ident = ident
        self.field = field
        super().__init__(ident if field is None else f"{ident}.{field}")

    def __str__(self):
        what = self.ident if self.field is None else f"{self.ident} ({self.field})"
        return f"missing statistic for {what}"


class NegativeValue(DogoptError, ValueError):
    pass


class IdMismatch(DogoptError, ValueError):
    pass


class InfeasibleW(DogoptError, ValueError):
    pass


class DomainError(DogoptError, ValueError):
    pass


class TooLarge(DogoptError):
    pass


class Inconsistent(DogoptError, ValueError):
    """Declared Use/Def sets disagree with the ones derived from the expression."""


class NotAdjacent(DogoptError, ValueError):
    pass


class Underdetermined(DogoptError, ValueError):
    pass


class SingularFit(DogoptError, ValueError):
    pass


class MissingModel(DogoptError, KeyError):
    pass


class WouldBreakKey(DogoptError, ValueError):
    pass


class ExprTypeError(DogoptError, TypeError):
    """Expression applied to values of the wrong type (includes division by zero and nulls)."""


class RowKeyError(DogoptError, KeyError):
    pass


class SchemaMismatch(DogoptError, ValueError):
    pass
