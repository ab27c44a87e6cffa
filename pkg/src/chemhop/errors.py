"""Exception types shared across the pipeline."""


class ChemhopError(Exception):
    """Base class for all pipeline errors."""


# --- LLM gateway ---

class ProviderUnreachable(ChemhopError):
    """Transport-level failure that persisted through all retries."""


class ProviderRejected(ChemhopError):
    """Provider returned a non-retryable status (auth, bad request, ...)."""


class BudgetExceeded(ChemhopError):
    """A configured request or token cap was hit."""


class MalformedOutput(ChemhopError):
    """Model output could not be parsed into the expected shape."""


# --- corpus ingest ---

class SourceUnreachable(ChemhopError):
    """External data source could not be reached."""


class SchemaMismatch(ChemhopError):
    """Source response is missing required fields."""


class NoIntroductionFound(ChemhopError):
    """No introduction header matched and no fallback region is configured."""


# --- entity extraction ---

class ProviderUnavailable(ChemhopError):
    """NER provider is down or unhealthy."""


# --- enrichment ---

class AmbiguousName(ChemhopError):
    """Name resolved to multiple compound ids under strict resolution."""


# --- graph store ---

class CorruptFile(ChemhopError):
    """Persisted graph failed checksum or schema validation."""


# --- path sampling ---

class NoPathsAvailable(ChemhopError):
    """No valid path of the requested length exists in the graph."""


# --- question generation ---

class AnswerLeak(ChemhopError):
    """A (sub-)answer string occurs in the generated question after retry."""


class AnswerMismatch(ChemhopError):
    """Generated answer does not match the expected head entity."""


class ChainBroken(ChemhopError):
    """Sub-question chain does not link through the path's entities."""


# --- verification ---

class IncompleteRecords(ChemhopError):
    """Consensus filtering requires records for every (item, model) pair."""


# --- CLI ---

class MissingInput(ChemhopError):
    """A prior pipeline stage's artifact is absent."""


class ConfigInvalid(ChemhopError):
    """Run configuration failed validation."""
