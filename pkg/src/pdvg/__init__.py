"""Radar-threat-aware path planning with navigation uncertainty propagation.

Subpackage map:
    radar       -- detection probability model, ellipsoid RCS, analytic Jacobians
    trajectory  -- waypoint smoothing (line/arc/clothoid fillets) and IMU-consistent sampling
    ins         -- 15-state error covariance propagation for the aided INS
    lincov      -- augmented truth/nav dispersion model and error budgets
    montecarlo  -- ensemble validation with a full error-state EKF per run
    planner     -- visibility-graph planner with radar polygon expansion
    scenario    -- configuration parsing, unit conversion, serialization
    cli         -- command-line entry point
"""

__version__ = "0.1.0"
