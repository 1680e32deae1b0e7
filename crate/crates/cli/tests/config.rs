use std::collections::HashMap;

use officeflow::endpoint::Role;
use officeflow::Error;
use officeflow_cli::config::{url_var, Backend, Config, ENV_PORT, ENV_STATE};

fn env(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
    let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    move |k| map.get(k).cloned()
}

#[test]
fn defaults() {
    let cfg = Config::parse("").unwrap();
    assert_eq!(cfg, Config::default());
    assert_eq!(cfg.service.port, 8080);
    assert_eq!((cfg.pipeline.k, cfg.pipeline.window), (5, 10));
    assert_eq!(cfg.fixture.name, "F1");
    assert!(cfg.validate().is_ok());
}

#[test]
fn file_values() {
    let cfg = Config::parse(
        r#"
        [service]
        port = 9001
        [pipeline]
        k = 3
        [backends]
        plan = "endpoint"
        [endpoints.plan]
        url = "http://127.0.0.1:9000/complete"
        "#,
    )
    .unwrap();
    assert_eq!(cfg.service.port, 9001);
    assert_eq!(cfg.pipeline.k, 3);
    assert_eq!(cfg.pipeline.window, 10);
    assert_eq!(cfg.backends.plan, Backend::Endpoint);
    assert_eq!(cfg.endpoint(Role::Plan).unwrap().timeout_ms, 10_000);
    assert!(cfg.endpoint(Role::Solve).is_none());
}

#[test]
fn environment_overrides_file() {
    let mut cfg = Config::parse("[service]\nport = 9001\n[endpoints.solve]\nurl = \"http://a\"\ntimeout_ms = 50\n").unwrap();
    cfg.apply_env(env(&[(ENV_PORT, "7000"), (ENV_STATE, "/tmp/s.json"), (&url_var(Role::Solve), "http://b")])).unwrap();
    assert_eq!(cfg.service.port, 7000);
    assert_eq!(cfg.service.state_path.as_deref(), Some(std::path::Path::new("/tmp/s.json")));
    let e = &cfg.endpoints[&Role::Solve];
    assert_eq!((e.url.as_str(), e.timeout_ms), ("http://b", 50));
    // A URL alone does not switch the backend.
    assert!(cfg.endpoint(Role::Solve).is_none());
    assert_eq!(url_var(Role::Rewrite), "OFFICEFLOW_REWRITE_URL");
}

#[test]
fn bad_values() {
    let mut cfg = Config::default();
    assert!(matches!(cfg.apply_env(env(&[(ENV_PORT, "eighty")])), Err(Error::Usage(_))));
    assert!(matches!(Config::parse("[service]\nportt = 1\n"), Err(Error::Parse { .. })));
    assert!(matches!(Config::parse("[backends]\nplan = \"magic\"\n"), Err(Error::Parse { .. })));
    let mut cfg = Config::default();
    cfg.fixture.name = "F7".into();
    assert!(matches!(cfg.validate(), Err(Error::UnknownFixture(_))));
    let mut cfg = Config::default();
    cfg.pipeline.k = 0;
    assert!(matches!(cfg.validate(), Err(Error::Usage(_))));
}
