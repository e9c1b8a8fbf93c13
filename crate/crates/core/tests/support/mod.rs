#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use sitewalk::env::{CategoryParams, ForumParams, GeneratorParams, SiteFixture, SiteRegistry};
use sitewalk::executor::ExecLimits;
use sitewalk::gateway::{GenerationParams, ScriptEntry, ScriptedBackend, ScriptedFixture, Session};
use sitewalk::harness::{BackendSource, RouteMode, RunConfig};
use sitewalk::navigator::NavLimits;
use sitewalk::sandbox::{ProcessSandbox, Sandbox};

pub fn stub_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/support/sandbox_stub.py")
}

pub fn stub_sandbox() -> Arc<dyn Sandbox> {
    Arc::new(
        ProcessSandbox::new(&["python3".to_string(), stub_path().display().to_string()])
            .expect("sandbox command"),
    )
}

pub fn category(name: &str, items: u32) -> CategoryParams {
    CategoryParams {
        name: name.into(),
        parent: Some("Electronics".into()),
        items,
    }
}

/// A catalog with three categories of 50+ items each.
pub fn shop(seed: u64) -> SiteFixture {
    SiteFixture::generate(
        "shop",
        seed,
        &GeneratorParams {
            title: Some("One Stop Market".into()),
            categories: vec![
                category("Home Audio", 56),
                category("Cameras", 50),
                category("Headphones", 61),
            ],
            authors: 12,
            ..Default::default()
        },
    )
}

/// A forum site.
pub fn forum(seed: u64) -> SiteFixture {
    SiteFixture::generate(
        "forum",
        seed,
        &GeneratorParams {
            title: Some("Postmill".into()),
            forums: vec![
                ForumParams { name: "OldSchoolCool".into(), posts: 60 },
                ForumParams { name: "books".into(), posts: 45 },
            ],
            authors: 15,
            ..Default::default()
        },
    )
}

pub fn registry(fixtures: impl IntoIterator<Item = SiteFixture>) -> SiteRegistry {
    fixtures.into_iter().collect()
}

pub fn config(script: ScriptedFixture, replan: bool) -> RunConfig {
    RunConfig {
        backend: BackendSource::Scripted { fixture: script, strict: true },
        params: GenerationParams::default(),
        sandbox: stub_sandbox(),
        nav: NavLimits {
            max_steps: 40,
            replan_enabled: replan,
            ..NavLimits::default()
        },
        exec: ExecLimits {
            per_attempt_timeout_s: 10,
            ..ExecLimits::default()
        },
        route_mode: RouteMode::Auto,
        out_dir: None,
    }
}

pub fn session(entries: Vec<ScriptEntry>) -> Session {
    let mut fixture = ScriptedFixture::default();
    for e in entries {
        fixture.push(e);
    }
    Session::new(
        Arc::new(ScriptedBackend::new(&fixture, true).expect("fixture")),
        GenerationParams::default(),
    )
}
