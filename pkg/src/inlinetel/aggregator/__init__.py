"""Scrape, store, query and tabulate exposition metrics."""

from .expfmt import ParsedSample, ParseError, parse_exposition, parse_exposition_full
from .query import GrammarError, QueryError, parse_query, query_instant, query_range
from .scrape import ConfigError, ScrapeConfig, ScrapeResult, Scraper, scrape_once
from .service import Aggregator, DataService
from .store import OutOfOrder, Series, TimeSeriesStore, counter_increase
from .tabular import Feature, ShapeError, TabularDataset, build_tabular

__all__ = [
    "Aggregator", "ConfigError", "DataService", "Feature", "GrammarError", "OutOfOrder",
    "ParseError", "ParsedSample", "QueryError", "ScrapeConfig", "ScrapeResult", "Scraper",
    "Series", "ShapeError", "TabularDataset", "TimeSeriesStore", "build_tabular",
    "counter_increase", "parse_exposition", "parse_exposition_full", "parse_query",
    "query_instant", "query_range", "scrape_once",
]
