"""Domain exceptions. All inherit from AgbmapError so the CLI can map
any domain failure to exit code 1."""


class AgbmapError(Exception):
    pass


# waveform processing
class NoSignal(AgbmapError):
    pass


class DegenerateNoise(AgbmapError):
    pass


class FitFailure(AgbmapError):
    pass


# allometry
class InvalidTree(AgbmapError):
    pass


class InvalidPlot(AgbmapError):
    pass


class UnitError(AgbmapError):
    pass


# regression
class RankDeficient(AgbmapError):
    pass


class BadK(AgbmapError):
    pass


class EmptyDesign(AgbmapError):
    pass


# geostatistics
class TooFewSamples(AgbmapError):
    pass


class SingularSystem(AgbmapError):
    pass


class EmptyNeighborhood(AgbmapError):
    pass


# raster kernels
class BadFactor(AgbmapError):
    pass


class DegenerateRange(AgbmapError):
    pass


class TooFewBands(AgbmapError):
    pass


# pipeline
class NoPairs(AgbmapError):
    pass


class NoQualifyingCells(AgbmapError):
    pass


class ConfigError(AgbmapError):
    pass
