use super::protocol::{self, ErrorReply, GenerateRequest, IqaRequest, VqaRequest};
use super::{BackendEndpoint, BackendError, ImageInput, IqaBackend, LlmBackend, Role, VqaBackend};
use async_trait::async_trait;
use serde::Serialize;

/// A backend reached over the JSON wire protocol.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    endpoint: BackendEndpoint,
    client: reqwest::Client,
}

impl HttpBackend {
    pub fn new(endpoint: BackendEndpoint) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(endpoint.timeout)
            .build()
            .map_err(|e| BackendError::Config(format!("http client: {e}")))?;
        Ok(Self { endpoint, client })
    }

    pub fn endpoint(&self) -> &BackendEndpoint {
        &self.endpoint
    }

    async fn post<B: Serialize + Sync>(&self, role: Role, path: &str, body: &B) -> Result<Vec<u8>, BackendError> {
        if self.endpoint.role != role {
            return Err(BackendError::WrongRole {
                backend_id: self.endpoint.backend_id.clone(),
                expected: role,
                actual: self.endpoint.role,
            });
        }
        let url = format!("{}{}", self.endpoint.url.trim_end_matches('/'), path);
        let transport = |e: reqwest::Error| BackendError::Transport {
            endpoint: url.clone(),
            message: e.to_string(),
        };
        let mut request = self.client.post(&url).json(body);
        if let Some(token) = &self.endpoint.bearer_token {
            request = request.bearer_auth(token);
        }
        let response = request.send().await.map_err(transport)?;
        let status = response.status();
        let bytes = response.bytes().await.map_err(transport)?;
        if !status.is_success() {
            let message = serde_json::from_slice::<ErrorReply>(&bytes)
                .map(|e| e.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
            return Err(BackendError::Status {
                backend_id: self.endpoint.backend_id.clone(),
                status: status.as_u16(),
                message,
            });
        }
        Ok(bytes.to_vec())
    }
}

#[async_trait]
impl VqaBackend for HttpBackend {
    fn backend_id(&self) -> &str {
        &self.endpoint.backend_id
    }

    async fn answer(&self, image: &ImageInput, question: &str) -> Result<Vec<u8>, BackendError> {
        let body = VqaRequest {
            image_png_b64: protocol::encode_image(image.png()),
            question: question.to_string(),
        };
        self.post(Role::Vqa, protocol::VQA_PATH, &body).await
    }
}

#[async_trait]
impl IqaBackend for HttpBackend {
    fn backend_id(&self) -> &str {
        &self.endpoint.backend_id
    }

    async fn score(&self, image: &ImageInput, text: Option<&str>) -> Result<Vec<u8>, BackendError> {
        let body = IqaRequest {
            image_png_b64: protocol::encode_image(image.png()),
            text: text.map(str::to_string),
        };
        self.post(Role::Iqa, protocol::IQA_PATH, &body).await
    }
}

#[async_trait]
impl LlmBackend for HttpBackend {
    fn backend_id(&self) -> &str {
        &self.endpoint.backend_id
    }

    async fn generate(&self, prompt: &str) -> Result<Vec<u8>, BackendError> {
        let body = GenerateRequest {
            prompt: prompt.to_string(),
        };
        self.post(Role::Llm, protocol::GENERATE_PATH, &body).await
    }
}
