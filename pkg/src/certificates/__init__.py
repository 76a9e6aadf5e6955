from src.certificates.jsr_lyapunov import (
    JsrLyapunov,
    veps_constants,
    veps_drift_check,
    veps_eval,
)
from src.certificates.quadratic import (
    QuadraticCertificate,
    QuadSearchResult,
    quad_extend_check,
    quad_search,
    quad_verify,
)
