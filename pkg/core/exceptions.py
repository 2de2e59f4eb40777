class PVDError(Exception):
    """Base class for every error raised by the design engine."""


class ParseError(PVDError):
    def __init__(self, row, column, reason):
        self.row = row
        self.column = column
        self.reason = reason
        super().__init__(f"row {row}, column '{column}': {reason}")


class SchemaMismatch(PVDError):
    pass


class UnknownColumn(PVDError):
    def __init__(self, column, where=''):
        self.column = column
        super().__init__(f"Unknown column '{column}'" + (f" in {where}" if where else ''))


class TypeMismatch(PVDError, TypeError):
    pass


class UnboundChoice(PVDError):
    def __init__(self, choice_id):
        self.choice_id = choice_id
        super().__init__(f"Choice '{choice_id}' is not bound")


class OutOfDomain(PVDError):
    def __init__(self, choice_id, value, reason='value outside the declared domain'):
        self.choice_id = choice_id
        self.value = value
        super().__init__(f"Choice '{choice_id}' = {value!r}: {reason}")


class ConstraintViolation(OutOfDomain):
    def __init__(self, lower_id, upper_id, lower, upper):
        self.upper_id = upper_id
        super().__init__(lower_id, lower, f"must not exceed '{upper_id}' = {upper!r}")


class DomainExplosion(PVDError):
    def __init__(self, count, cap):
        self.count = count
        self.cap = cap
        super().__init__(f"{count} bindings exceed the cap of {cap}; sample instead")


class CapExceeded(PVDError):
    def __init__(self, cells, cap):
        self.cells = cells
        self.cap = cap
        super().__init__(f"Structure needs {cells} cells, cap is {cap}")


class StructureUnsupported(PVDError):
    pass


class MissingStats(PVDError):
    pass


class StaleStructure(PVDError):
    pass


class SpecInvalid(PVDError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__('; '.join(str(d) for d in self.diagnostics))


class PlanFormatError(PVDError):
    def __init__(self, location, detail):
        self.location = location
        self.detail = detail
        super().__init__(f"{location}: {detail}")
