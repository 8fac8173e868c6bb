//! Tool ordering for the coordinate pattern. The built-in policy is fixed;
//! an external endpoint may reorder or drop the optional steps but cannot
//! change what a step does.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::CoordinateQuery;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanStep {
    /// Look the composition up in the depot.
    SearchDepot,
    /// Run the generate/gate/evaluate loop.
    Iterate,
    /// Dedup, symmetry and property-bound filtering of the results.
    Finalize,
}

pub trait Planner {
    fn plan(&self, query: &CoordinateQuery) -> Vec<PlanStep>;
}

/// Search the depot, iterate, finalize.
#[derive(Debug, Clone, Copy, Default)]
pub struct RulePlanner;

impl Planner for RulePlanner {
    fn plan(&self, _query: &CoordinateQuery) -> Vec<PlanStep> {
        vec![PlanStep::SearchDepot, PlanStep::Iterate, PlanStep::Finalize]
    }
}

/// A plan must iterate, end with finalize, and name each step at most once.
pub fn validate_plan(steps: &[PlanStep]) -> Result<()> {
    let count = |s: PlanStep| steps.iter().filter(|&&x| x == s).count();
    if count(PlanStep::Iterate) != 1 || count(PlanStep::Finalize) != 1 || count(PlanStep::SearchDepot) > 1 {
        return Err(Error::usage(format!("invalid plan {steps:?}")));
    }
    if steps.last() != Some(&PlanStep::Finalize) {
        return Err(Error::usage("plan must end with finalize"));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct PlanRequest<'a> {
    query: &'a CoordinateQuery,
    tools: [PlanStep; 3],
}

#[derive(Debug, Deserialize)]
struct PlanResponse {
    steps: Vec<PlanStep>,
}

/// Posts the query to `url` and expects `{"steps": [...]}` back. Any
/// transport, parse or validation failure falls back to [`RulePlanner`].
#[derive(Debug, Clone)]
pub struct EndpointPlanner {
    pub url: String,
    pub timeout: Duration,
}

impl EndpointPlanner {
    fn request(&self, query: &CoordinateQuery) -> Result<Vec<PlanStep>> {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(self.timeout)).build().into();
        let body = PlanRequest { query, tools: [PlanStep::SearchDepot, PlanStep::Iterate, PlanStep::Finalize] };
        let mut response = agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(serde_json::to_string(&body)?)
            .map_err(|e| Error::usage(format!("planner endpoint: {e}")))?;
        let text = response.body_mut().read_to_string().map_err(|e| Error::usage(format!("planner endpoint: {e}")))?;
        let parsed: PlanResponse = serde_json::from_str(&text)?;
        validate_plan(&parsed.steps)?;
        Ok(parsed.steps)
    }
}

impl Planner for EndpointPlanner {
    fn plan(&self, query: &CoordinateQuery) -> Vec<PlanStep> {
        self.request(query).unwrap_or_else(|e| {
            log::warn!("falling back to the rule planner: {e}");
            RulePlanner.plan(query)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_validation() {
        use PlanStep::*;
        assert!(validate_plan(&[SearchDepot, Iterate, Finalize]).is_ok());
        assert!(validate_plan(&[Iterate, Finalize]).is_ok());
        assert!(validate_plan(&[Iterate, SearchDepot, Finalize]).is_ok());
        assert!(validate_plan(&[SearchDepot, Finalize]).is_err());
        assert!(validate_plan(&[Finalize, Iterate]).is_err());
        assert!(validate_plan(&[Iterate, Iterate, Finalize]).is_err());
    }

    #[test]
    fn unreachable_endpoint_falls_back() {
        let planner = EndpointPlanner { url: "http://127.0.0.1:9/plan".into(), timeout: Duration::from_millis(200) };
        let query = CoordinateQuery::new("Fe2O3".parse().unwrap());
        assert_eq!(planner.plan(&query), RulePlanner.plan(&query));
    }
}
