use serde_json::Value;

use super::{ClientError, Result, Route, ServiceEndpoint, Transport};

/// Blocking JSON-over-HTTP transport.
pub struct HttpTransport {
    endpoint: ServiceEndpoint,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: ServiceEndpoint) -> Result<Self> {
        endpoint.validate()?;
        let agent = ureq::AgentBuilder::new().timeout(endpoint.timeout).build();
        Ok(HttpTransport { endpoint, agent })
    }

    pub fn url(&self, route: Route) -> String {
        format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), route.path())
    }
}

impl Transport for HttpTransport {
    fn post(&self, route: Route, body: &Value) -> Result<Value> {
        let mut req = self.agent.post(&self.url(route)).set("Content-Type", "application/json");
        if let Some(token) = &self.endpoint.auth_token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_json(body) {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| ClientError::Protocol(format!("undecodable response: {e}"))),
            Err(ureq::Error::Status(code, resp)) => Err(ClientError::Status {
                code,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => Err(ClientError::Transport(t.to_string())),
        }
    }
}
