//! Blocking HTTP client for the lab server.

pub mod api;

use api::*;
use std::io::Read;
use std::time::Duration;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),

    #[error("server error ({status}): {message}")]
    Server { status: u16, message: String },

    #[error("job {id} failed: {message}")]
    JobFailed { id: u64, message: String },

    #[error("decode error: {0}")]
    Decode(String),
}

pub struct LabClient {
    base: String,
    agent: ureq::Agent,
}

impl LabClient {
    /// `base` like `http://127.0.0.1:8023`.
    pub fn new(base: impl Into<String>) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_read(Duration::from_secs(600))
            .timeout_write(Duration::from_secs(600))
            .build();
        LabClient {
            base: base.into().trim_end_matches('/').to_string(),
            agent,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn decode<T: serde::de::DeserializeOwned>(
        &self,
        resp: std::result::Result<ureq::Response, ureq::Error>,
    ) -> Result<T> {
        match resp {
            Ok(r) => r
                .into_json::<T>()
                .map_err(|e| ClientError::Decode(e.to_string())),
            Err(ureq::Error::Status(status, r)) => {
                let message = r
                    .into_json::<ErrorBody>()
                    .map(|b| b.error)
                    .unwrap_or_else(|_| "unreadable error body".to_string());
                Err(ClientError::Server { status, message })
            }
            Err(e) => Err(ClientError::Transport(e.to_string())),
        }
    }

    pub fn health(&self) -> Result<Health> {
        self.decode(self.agent.get(&self.url("/api/v1/health")).call())
    }

    pub fn submit(&self, job: &JobRequest) -> Result<u64> {
        let resp: SubmitResponse = self.decode(
            self.agent
                .post(&self.url("/api/v1/jobs"))
                .send_json(serde_json::to_value(job).expect("job serializes")),
        )?;
        Ok(resp.job_id)
    }

    pub fn job(&self, id: u64) -> Result<JobStatus> {
        self.decode(self.agent.get(&self.url(&format!("/api/v1/jobs/{id}"))).call())
    }

    pub fn jobs(&self) -> Result<Vec<JobStatus>> {
        self.decode(self.agent.get(&self.url("/api/v1/jobs")).call())
    }

    /// Polls until the job leaves the queue/running states. Calls
    /// `on_progress` with each observed status.
    pub fn wait(
        &self,
        id: u64,
        poll: Duration,
        mut on_progress: impl FnMut(&JobStatus),
    ) -> Result<JobStatus> {
        loop {
            let status = self.job(id)?;
            on_progress(&status);
            match status.state {
                JobState::Done => return Ok(status),
                JobState::Failed => {
                    return Err(ClientError::JobFailed {
                        id,
                        message: status.error.unwrap_or_default(),
                    })
                }
                _ => std::thread::sleep(poll),
            }
        }
    }

    pub fn artifact(&self, path: &str) -> Result<Vec<u8>> {
        let resp = self
            .agent
            .get(&self.url(&format!("/api/v1/artifacts/{path}")))
            .call();
        match resp {
            Ok(r) => {
                let mut buf = Vec::new();
                r.into_reader()
                    .read_to_end(&mut buf)
                    .map_err(|e| ClientError::Decode(e.to_string()))?;
                Ok(buf)
            }
            Err(ureq::Error::Status(status, r)) => {
                let message = r
                    .into_json::<ErrorBody>()
                    .map(|b| b.error)
                    .unwrap_or_else(|_| "unreadable error body".to_string());
                Err(ClientError::Server { status, message })
            }
            Err(e) => Err(ClientError::Transport(e.to_string())),
        }
    }

    pub fn calibrate(&self, req: &CalibrateRequest) -> Result<CalibrateResponse> {
        self.decode(
            self.agent
                .post(&self.url("/api/v1/calibrate"))
                .send_json(serde_json::to_value(req).expect("request serializes")),
        )
    }

    pub fn plot(&self, req: &PlotRequest) -> Result<PlotResponse> {
        self.decode(
            self.agent
                .post(&self.url("/api/v1/plot"))
                .send_json(serde_json::to_value(req).expect("request serializes")),
        )
    }
}
