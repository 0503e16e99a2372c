use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use super::*;
use crate::dsl::{parse_program, render_program, ComposerCommand, Direction};
use crate::http::{HttpConfig, ProviderError};
use crate::world::{EnvironmentProfile, PromptExample};

const PAN: &str = "objects = ['saucepan', 'saucepan_lid']
# Query: leave the pan open.
composer(\"grasp the saucepan_lid\")
composer(\"move away from the saucepan by 25cm\")
composer(\"open gripper\")
composer(\"back to default pose\")
# done
";

const LID_FAILED: &str = "composer(\"grasp the lid\")
composer(\"back to default pose\")
composer(\"move to 5cm above the cup\")
composer(\"open gripper\")
composer(\"back to default pose\")
";

const LID_MTP: &str = "composer(\"grasp the lid\")
composer(\"move gripper 10cm up\")
composer(\"back to default pose\")
";

const YELLOW: &str = "objects = ['drawer']
# Query: open the drawer.
composer(\"grasp the drawer\")
composer(\"move 10cm backward from the gripper\")
composer(\"open gripper\")
# done
";

fn template(examples: &[(&str, &str)]) -> PromptTemplate {
    let examples: Vec<PromptExample> = examples
        .iter()
        .map(|(i, c)| PromptExample {
            instruction: i.to_string(),
            code: c.to_string(),
        })
        .collect();
    PromptTemplate::new("target", TemplateSet::default(), &examples).unwrap()
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

#[test]
fn generation_prompt_ends_with_stub() {
    let t = template(&[("open the drawer.", YELLOW)]);
    let p = build_generation_prompt(&t, "leave the pan open.", Some(&names(&["saucepan", "saucepan_lid"])))
        .unwrap();
    assert!(p.trim_end().ends_with(
        "objects = ['saucepan', 'saucepan_lid']\n# Query: leave the pan open."
    ));
    assert!(p.contains("composer(\"move 10cm backward from the gripper\")"));
    assert!(p.starts_with(&t.system_preamble));
    // byte-identical across calls
    assert_eq!(
        p,
        build_generation_prompt(&t, "leave the pan open.", Some(&names(&["saucepan", "saucepan_lid"])))
            .unwrap()
    );
}

#[test]
fn generation_prompt_errors_and_empty_examples() {
    let t = template(&[]);
    let p = build_generation_prompt(&t, "x", Some(&[])).unwrap();
    assert!(p.contains("# Query: x"));
    assert!(!p.contains("composer(\"grasp"));
    assert_eq!(
        build_generation_prompt(&t, "x", None),
        Err(OrchestratorError::UnfilledSlot("object_list".into()))
    );
    assert_eq!(
        build_generation_prompt(&t, "  ", Some(&[])),
        Err(OrchestratorError::UnfilledSlot("instruction".into()))
    );
}

#[test]
fn invalid_example_rejected() {
    let err = PromptTemplate::new(
        "t",
        TemplateSet::default(),
        &[PromptExample {
            instruction: "x".into(),
            code: "robot.move()".into(),
        }],
    )
    .unwrap_err();
    assert!(matches!(err, OrchestratorError::InvalidExample { index: 0, .. }));
}

#[test]
fn fill_is_single_pass() {
    let out = fill("a {x} b {y} {not a slot} {}", &[("x", Some("{y}")), ("y", Some("Y"))]).unwrap();
    assert_eq!(out, "a {y} b Y {not a slot} {}");
    assert_eq!(
        fill("{missing}", &[]),
        Err(OrchestratorError::UnfilledSlot("missing".into()))
    );
}

#[test]
fn adaptation_prompt_has_examples_and_labeled_source() {
    let t = template(&[("open the drawer.", YELLOW)]);
    let p = build_adaptation_prompt(&t, PAN, "RLBench").unwrap();
    assert!(p.contains("composer(\"grasp the drawer\")"));
    assert!(p.contains("Source plan from RLBench:"));
    assert!(p.contains("composer(\"move away from the saucepan by 25cm\")"));
    assert!(build_adaptation_prompt(&t, YELLOW, "target").is_ok());
    assert!(matches!(
        build_adaptation_prompt(&t, "import os", "RLBench"),
        Err(OrchestratorError::Parse(_))
    ));
}

#[test]
fn replan_prompt_block_order() {
    let t = template(&[("open the drawer.", YELLOW)]);
    let p = build_replan_prompt(&t, LID_FAILED, LID_MTP, "remove the lid from the cup").unwrap();
    let ex = p.find("composer(\"grasp the drawer\")").unwrap();
    let good = p.find("Successful plan from memory:").unwrap();
    let adapted = p.find("composer(\"move gripper 10cm up\")").unwrap();
    let bad = p.find("Failed plan:").unwrap();
    let failed = p.find("composer(\"move to 5cm above the cup\")").unwrap();
    let query = p.rfind("# Query: remove the lid from the cup").unwrap();
    assert!(ex < good && good < adapted && adapted < bad && bad < failed && failed < query);
    assert!(build_replan_prompt(&t, LID_FAILED, LID_FAILED, "q").is_ok());
    assert_eq!(
        build_replan_prompt(&t, LID_FAILED, LID_MTP, ""),
        Err(OrchestratorError::UnfilledSlot("instruction".into()))
    );
    assert!(matches!(
        build_replan_prompt(&t, "nope", LID_MTP, "q"),
        Err(OrchestratorError::Parse(_))
    ));
}

#[test]
fn scripted_provider_returns_fig2_code() {
    let p = ScriptedProvider::new(Script {
        strict: true,
        rules: vec![ScriptRule::respond(&["Query: leave the pan open"], PAN)],
    });
    let t = template(&[]);
    let prompt = build_generation_prompt(&t, "leave the pan open.", Some(&[])).unwrap();
    let text = complete(&p, &prompt).unwrap();
    assert_eq!(extract_program(&text).unwrap(), parse_program(PAN).unwrap());
}

#[test]
fn extract_from_fences_and_prose() {
    let fenced = format!("Here is the plan:\n```python\n{PAN}```\nThat should work.");
    let p = extract_program(&fenced).unwrap();
    assert_eq!(p.steps.len(), 4);
    assert!(p.done);

    assert_eq!(
        extract_program("I cannot help with that."),
        Err(OrchestratorError::NoProgramFound)
    );
    assert_eq!(extract_program(""), Err(OrchestratorError::NoProgramFound));
    // a comment-only run has no steps
    assert_eq!(
        extract_program("```\n# thinking\n```"),
        Err(OrchestratorError::NoProgramFound)
    );

    let two = format!("First:\n```\n{LID_MTP}```\nOr:\n```\n{LID_FAILED}```\n");
    assert_eq!(extract_program(&two).unwrap(), parse_program(LID_MTP).unwrap());

    // unfenced block, prose directly after
    let bare = format!("{LID_MTP}This lifts the lid.");
    assert_eq!(extract_program(&bare).unwrap().steps.len(), 3);
}

#[test]
fn extract_inverts_render_inside_prose() {
    for code in [PAN, LID_MTP, LID_FAILED, YELLOW] {
        let p = parse_program(code).unwrap();
        let wrapped = format!("Sure.\n\n{}\nLet me know.", render_program(&p));
        assert_eq!(extract_program(&wrapped).unwrap(), p);
    }
}

fn plain() -> EnvironmentProfile {
    EnvironmentProfile::new("plain")
}

#[test]
fn retargeting_by_token_overlap() {
    let scene = names(&["cup", "saucepan_lid"]);
    assert_eq!(retarget_name("lid", &scene).as_deref(), Some("saucepan_lid"));
    assert_eq!(retarget_name("cup", &scene).as_deref(), Some("cup"));
    assert_eq!(retarget_name("saucepan lid", &scene).as_deref(), Some("saucepan_lid"));
    assert_eq!(retarget_name("plate", &scene), None);
    // tie on Jaccard 1/2: shorter name wins, then lexicographic
    let scene = names(&["red_block_big", "red_box", "blue_box"]);
    assert_eq!(retarget_name("box", &scene).as_deref(), Some("red_box"));
    let scene = names(&["zz_box", "aa_box"]);
    assert_eq!(retarget_name("box", &scene).as_deref(), Some("aa_box"));
    // Jaccard oracle: {lid} vs {cup, lid} = 1/2
    assert_eq!(name_similarity("lid", "cup_lid"), 0.5);
    assert_eq!(name_similarity("Red Box", "red_box"), 1.0);
}

#[test]
fn adapt_grasp_lid_into_saucepan_scene() {
    let src = parse_program("composer(\"grasp the lid\")").unwrap();
    let out = rule_based_adapt(&src, &plain(), &plain(), &names(&["cup", "saucepan_lid"])).unwrap();
    assert_eq!(
        out.steps[0].command,
        ComposerCommand::Grasp {
            object: "saucepan_lid".into()
        }
    );
    assert_eq!(out.steps[0].raw, "grasp the saucepan_lid");
}

#[test]
fn adapt_prepends_default_pose_and_scales() {
    let mut tgt = EnvironmentProfile::new("tgt");
    tgt.requires_default_pose_init = true;
    tgt.unit_scale = 2.0;
    let src = parse_program(
        "# lift it\ncomposer(\"grasp the cube\")\ncomposer(\"move gripper 10cm up\")\n# let go\ncomposer(\"open gripper\")",
    )
    .unwrap();
    let out = rule_based_adapt(&src, &plain(), &tgt, &names(&["toy_cube"])).unwrap();
    assert_eq!(out.steps.len(), 4);
    assert_eq!(out.steps[0].command, ComposerCommand::DefaultPose);
    assert_eq!(
        out.steps[2].command,
        ComposerCommand::MoveRelative {
            distance: 0.2,
            direction: Direction::Up,
            reference: crate::dsl::Reference::None,
        }
    );
    assert_eq!(out.steps[2].raw, "move gripper 20cm up");
    // open gripper text survives untouched
    assert_eq!(out.steps[3].raw, src.steps[2].raw);
    let before: Vec<usize> = out.comments.iter().map(|c| c.before_step).collect();
    assert_eq!(before, [1, 3]);
}

#[test]
fn adapt_identity_and_idempotence() {
    let scene = names(&["saucepan", "saucepan_lid"]);
    let src = parse_program(PAN).unwrap();
    assert_eq!(rule_based_adapt(&src, &plain(), &plain(), &scene).unwrap(), src);

    let mut tgt = EnvironmentProfile::new("tgt");
    tgt.requires_default_pose_init = true;
    tgt.default_pose_trailer = true;
    tgt.unit_scale = 2.0;
    let scene = names(&["big_saucepan", "saucepan_lid_red"]);
    let once = rule_based_adapt(&src, &plain(), &tgt, &scene).unwrap();
    let twice = rule_based_adapt(&once, &tgt, &tgt, &scene).unwrap();
    assert_eq!(once, twice);
    // at most one prefix and one suffix step, source order kept
    assert!(once.steps.len() <= src.steps.len() + 2);
    assert_eq!(
        once.declared_objects,
        Some(names(&["big_saucepan", "saucepan_lid_red"]))
    );
    assert_eq!(once.steps[2].raw, "move away from the big_saucepan by 50cm");
}

#[test]
fn adapt_trailer_and_unmappable() {
    let mut tgt = plain();
    tgt.default_pose_trailer = true;
    let src = parse_program(LID_FAILED).unwrap();
    let out = rule_based_adapt(&src, &plain(), &tgt, &names(&["cup", "lid"])).unwrap();
    assert_eq!(out, src, "already ends at default pose");
    let src = parse_program("composer(\"grasp the lid\")").unwrap();
    let out = rule_based_adapt(&src, &plain(), &tgt, &names(&["lid"])).unwrap();
    assert_eq!(out.steps.last().unwrap().command, ComposerCommand::DefaultPose);

    let err = rule_based_adapt(&src, &plain(), &plain(), &names(&["cup"])).unwrap_err();
    assert_eq!(err, OrchestratorError::NoMappableObject("lid".into()));

    // unknown steps and declared objects without a match
    let src = parse_program("objects = ['lid', 'sponge']\ncomposer(\"wipe the table\")").unwrap();
    let out = rule_based_adapt(&src, &plain(), &plain(), &names(&["cup_lid"])).unwrap();
    assert!(out.steps[0].command.is_unknown());
    assert_eq!(out.declared_objects, Some(names(&["cup_lid"])));
}

#[test]
fn llm_adapter_uses_adaptation_prompt() {
    let provider = ScriptedProvider::new(Script {
        strict: true,
        rules: vec![ScriptRule::respond(&["Source plan from src-env:"], LID_MTP)],
    });
    let t = template(&[]);
    let mut src_env = plain();
    src_env.name = "src-env".into();
    let out = adapt_program(
        AdapterKind::Llm,
        &parse_program(LID_FAILED).unwrap(),
        &src_env,
        &plain(),
        &[],
        Some((&provider, &t)),
    )
    .unwrap();
    assert_eq!(out, parse_program(LID_MTP).unwrap());
    assert!(adapt_program(AdapterKind::Llm, &out, &src_env, &plain(), &[], None).is_err());
}

/// Serves canned HTTP responses, one per connection, and counts requests.
fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut req = vec![0u8; len];
            reader.read_exact(&mut req).unwrap();
            bodies.push(String::from_utf8(req).unwrap());
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        bodies
    });
    (addr, handle)
}

fn chat_config(endpoint: &str) -> ChatConfig {
    let mut http = HttpConfig::new(endpoint, "test-model");
    http.backoff_base_secs = 0.01;
    http.timeout_secs = 5.0;
    ChatConfig {
        http,
        temperature: 0.0,
    }
}

#[test]
fn http_provider_retries_then_succeeds() {
    let ok = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": LID_MTP}}]})
        .to_string();
    let (addr, handle) = serve(vec![
        (500, "{}".into()),
        (503, "{}".into()),
        (200, ok),
    ]);
    let provider = HttpCompletionProvider::new(chat_config(&addr));
    let completion = provider.chat("remove the lid").unwrap();
    assert_eq!(completion.attempts, 3);
    assert_eq!(completion.text, LID_MTP);
    let bodies = handle.join().unwrap();
    let req: serde_json::Value = serde_json::from_str(&bodies[2]).unwrap();
    assert_eq!(req["messages"][0]["content"], "remove the lid");
    assert_eq!(req["model"], "test-model");
}

#[test]
fn http_provider_typed_errors() {
    let (addr, handle) = serve(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
    let provider = HttpCompletionProvider::new(chat_config(&addr));
    assert_eq!(
        provider.complete("x"),
        Err(ProviderError::HttpStatus {
            code: 500,
            attempts: 3
        })
    );
    handle.join().unwrap();

    let (addr, handle) = serve(vec![(404, "{}".into())]);
    let provider = HttpCompletionProvider::new(chat_config(&addr));
    assert_eq!(
        provider.complete("x"),
        Err(ProviderError::HttpStatus {
            code: 404,
            attempts: 1
        })
    );
    handle.join().unwrap();

    let (addr, handle) = serve(vec![(200, r#"{"choices": []}"#.into())]);
    let provider = HttpCompletionProvider::new(chat_config(&addr));
    assert!(matches!(
        provider.complete("x"),
        Err(ProviderError::MalformedResponse { attempts: 1, .. })
    ));
    handle.join().unwrap();

    // nothing listening
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let mut cfg = chat_config(&addr);
    cfg.http.max_attempts = 2;
    let provider = HttpCompletionProvider::new(cfg);
    assert!(matches!(
        provider.complete("x"),
        Err(ProviderError::Transport { attempts: 2, .. })
    ));
}

