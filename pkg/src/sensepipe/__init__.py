"""Image-based social-sensing pipeline.

Turns a crawl of image-bearing posts into per-country indicators:
deduplicate (URL + perceptual hash), filter with a cost-ordered chain,
geocode against a gazetteer, annotate through redundant crowd tasks with
majority aggregation, and validate the resulting indicators against survey
data.
"""

__version__ = "0.1.0"

from .crowd import (  # noqa: F401
    AggregatedAnnotation,
    AnnotationAnswers,
    DEFAULT_QUESTIONS,
    Task,
    TaskStore,
    UNRESOLVED,
    aggregate_answers,
    create_tasks,
)
from .dedup import PerceptualHash, dedup_images, dedup_urls, hamming, phash_file, phash_image  # noqa: F401
from .filter_chain import (  # noqa: F401
    FilterDecision,
    FilterEval,
    FilterProfile,
    eval_filter,
    optimize_order,
    profile_filters,
    run_chain,
)
from .geocode import Gazetteer, GeoResolution, extract_candidates, load_gazetteer, resolve  # noqa: F401
from .indicators import (  # noqa: F401
    CorrelationReport,
    IndicatorTable,
    SurveyRecord,
    compare,
    compute_indicators,
    export_choropleth,
    map_survey,
    pearson,
)
from .ingest import CrawlSpec, PostRecord, filter_crawl, parse_crawl  # noqa: F401
from .service import FunnelReport, PipelineConfig, create_app, pipeline_run  # noqa: F401
from .simcrowd import SimWorkerConfig, simulate  # noqa: F401
