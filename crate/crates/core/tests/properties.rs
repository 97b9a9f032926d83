use looppilot::dsl::{execute, parse_program, ExecLimits};
use looppilot::parsing::{edit_distance, extract_numbered_list, extract_tagged, parse_action_line};
use looppilot::worlds::drone3d::{gen_circle, Drone3d};
use looppilot::worlds::{default_registry, Pose3, World, WorldKind};
use proptest::prelude::*;

proptest! {
    #[test]
    fn tagged_content_round_trips(content in "[a-z0-9 (){}=,\n]{0,60}", tag in "[a-z]{1,8}") {
        let text = format!("prose <{tag}>{content}</{tag}> more");
        let e = extract_tagged(&text, &tag);
        prop_assert_eq!(e.contents(), vec![content.as_str()]);
        prop_assert!(e.warnings.is_empty());
    }

    #[test]
    fn numbered_items_round_trip(items in prop::collection::vec("[a-z][a-z ]{0,20}[a-z]", 1..10)) {
        let text: String = items
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {s}\n", i + 1))
            .collect();
        prop_assert_eq!(extract_numbered_list(&text), items);
    }

    #[test]
    fn rendered_actions_parse_back(forward in 0.0f64..100.0, turn in -179.0f64..180.0) {
        let a = parse_action_line(&format!("forward {forward}, turn {turn}")).unwrap();
        prop_assert_eq!(a.forward_m, forward);
        prop_assert!((a.turn_deg - turn).abs() < 1e-9);
        let again = parse_action_line(&a.render()).unwrap();
        prop_assert_eq!(again, a);
    }

    #[test]
    fn edit_distance_is_a_metric(a in "[a-z_]{0,10}", b in "[a-z_]{0,10}", c in "[a-z_]{0,10}") {
        prop_assert_eq!(edit_distance(&a, &a), 0);
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
    }

    #[test]
    fn circle_points_share_a_radius(r in 0.5f64..30.0, n in 3usize..40) {
        for p in gen_circle([1.0, -2.0], r, n, 4.0, true).unwrap() {
            prop_assert!(((p.x - 1.0).hypot(p.y + 2.0) - r).abs() < 1e-9);
        }
    }

    #[test]
    fn arithmetic_programs_are_deterministic(xs in prop::collection::vec(-50i32..50, 1..12)) {
        let source: String = xs
            .iter()
            .enumerate()
            .map(|(i, x)| format!("v{i} = {x} * 2 + {i}\nturn(v{i})\n"))
            .collect();
        let program = parse_program(&source).unwrap();
        let registry = default_registry(WorldKind::Drone3d);
        let run = || {
            let mut world = Drone3d::new(Pose3::new(0.0, 0.0, 0.0, 0.0), true, vec![]);
            let trace = {
                let mut bound = registry.bind(&mut world).unwrap();
                execute(&program, &mut bound, ExecLimits::default(), 1)
            };
            (trace, world.state_hash())
        };
        let (a, ha) = run();
        let (b, hb) = run();
        prop_assert_eq!(a.api_calls.len(), xs.len());
        prop_assert_eq!(a, b);
        prop_assert_eq!(ha, hb);
    }
}
