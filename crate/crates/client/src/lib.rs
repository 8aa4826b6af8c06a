//! Typed HTTP client for the wuglab service.

use serde::de::DeserializeOwned;
use serde::Serialize;
use wuglab_core::eval::EvalResult;
use wuglab_core::ops::*;
use wuglab_core::runner::Report;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server returned {status}: {message}")]
    Server { status: u16, message: String },
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Client { base: base_url.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let body = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<serde_json::Value>(&body)
            .ok()
            .and_then(|v| v.get("error").and_then(|e| e.as_str()).map(str::to_string))
            .unwrap_or(body);
        Err(ClientError::Server { status: status.as_u16(), message })
    }

    pub async fn post<Req: Serialize, Res: DeserializeOwned>(&self, path: &str, req: &Req) -> Result<Res, ClientError> {
        let resp = self.http.post(format!("{}/{}", self.base, path.trim_start_matches('/'))).json(req).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<serde_json::Value, ClientError> {
        Self::decode(self.http.get(format!("{}/health", self.base)).send().await?).await
    }

    pub async fn forge(&self, r: &ForgeRequest) -> Result<ForgeResponse, ClientError> {
        self.post("forge", r).await
    }

    pub async fn gen(&self, r: &GenRequest) -> Result<GenResponse, ClientError> {
        self.post("gen", r).await
    }

    pub async fn inject(&self, r: &InjectRequest) -> Result<InjectResponse, ClientError> {
        self.post("inject", r).await
    }

    pub async fn tok_train(&self, r: &TokTrainRequest) -> Result<TokTrainResponse, ClientError> {
        self.post("tok-train", r).await
    }

    pub async fn train(&self, r: &TrainRequest) -> Result<TrainResponse, ClientError> {
        self.post("train", r).await
    }

    pub async fn eval(&self, r: &EvalRequest) -> Result<Vec<EvalResult>, ClientError> {
        self.post("eval", r).await
    }

    pub async fn grid(&self, r: &GridRequest) -> Result<GridResponse, ClientError> {
        self.post("grid", r).await
    }

    pub async fn report(&self, r: &ReportRequest) -> Result<Report, ClientError> {
        self.post("report", r).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_url_is_normalised() {
        assert_eq!(Client::new("http://h:1/").base_url(), "http://h:1");
    }
}
