"""Symbolic world: scenes, visibility, action semantics, magnet pickup."""
import math

import pytest

from embodied_forge import world
from embodied_forge.errors import ConfigError


def make_state(fixtures=(), objects=(), agent=(0, 0, "S"), size=7,
               low_level=False):
    """Scene with explicit fixture cells; objects are placed by hand."""
    scene = world.SceneConfig(width=size, height=size, agent_start=agent,
                              fixtures=list(fixtures), low_level=low_level)
    state = world.init_scene(0, scene)
    for oid, parent, cell, band in objects:
        info = world.CATALOG[world.obj_type_of(oid)]
        state.objects[oid] = world.ObjectInstance(
            id=oid, obj_type=world.obj_type_of(oid),
            pickupable=info["pickupable"], openable=info["openable"],
            sliceable=info["sliceable"], receptacle=info["receptacle"],
            parent=parent, cell=cell, band=band)
    return state


# ---------------------------------------------------------------------------
# Scene configuration
# ---------------------------------------------------------------------------

def test_scene_config_text_round_trip():
    scene = world.random_scene_config(42)
    again = world.SceneConfig.from_text(scene.to_text())
    assert again == scene
    assert world.SceneConfig.from_text(again.to_text()) == again


def test_init_scene_deterministic():
    scene = world.random_scene_config(5)
    a = world.init_scene(9, scene)
    b = world.init_scene(9, scene)
    assert a.serialize() == b.serialize()


def test_init_scene_differs_across_seeds():
    scene = world.random_scene_config(5)
    assert world.init_scene(1, scene).serialize() != \
        world.init_scene(2, scene).serialize()


def test_init_scene_rejects_overlapping_fixtures():
    scene = world.SceneConfig(fixtures=[("Sink_1", "Sink", (2, 2)),
                                        ("Fridge_1", "Fridge", (2, 2))])
    with pytest.raises(ConfigError):
        world.init_scene(0, scene)


def test_init_scene_rejects_bad_types():
    with pytest.raises(ConfigError):
        world.init_scene(0, world.SceneConfig(fixtures=[("Apple_1", "Apple", (1, 1))]))
    with pytest.raises(ConfigError):
        world.init_scene(0, world.SceneConfig(object_counts={"Fridge": 1}))


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------

def test_action_encode_parse_round_trip():
    actions = [world.Action("MoveAhead"),
               world.Action("PickupObject", target="Apple_1"),
               world.Action("PutObject", target="Apple_1", receptacle="Sink_1"),
               world.Action("MoveArm", delta=(0.05, -0.05, 0.0))]
    for a in actions:
        assert world.parse_action(a.encode()) == a


@pytest.mark.parametrize("bad", ["Fly", "PickupObject", "PutObject|Apple_1",
                                 "MoveAhead|x", "MoveArm|1|2"])
def test_parse_action_rejects_garbage(bad):
    with pytest.raises(ValueError):
        world.parse_action(bad)


# ---------------------------------------------------------------------------
# Visibility
# ---------------------------------------------------------------------------

def test_visibility_requires_frontal_cone():
    state = make_state(objects=[("Apple_1", "floor", (0, 2), 0)],
                       agent=(0, 0, "S"))
    assert "Apple_1" in state.visible_ids()
    state.agent.heading = "N"
    assert "Apple_1" not in state.visible_ids()


def test_visibility_range_limit():
    state = make_state(objects=[("Apple_1", "floor", (0, 4), 0)],
                       agent=(0, 0, "S"))
    assert "Apple_1" not in state.visible_ids()  # distance 4 > range 3
    state.objects["Apple_1"].cell = (0, 3)
    assert "Apple_1" in state.visible_ids()


def test_closed_container_hides_contents():
    state = make_state(fixtures=[("Fridge_1", "Fridge", (0, 2))],
                       objects=[("Apple_1", "Fridge_1", (0, 2), 1)],
                       agent=(0, 0, "S"))
    assert "Apple_1" not in state.visible_ids()
    state.objects["Fridge_1"].is_open = True
    assert "Apple_1" in state.visible_ids()


def test_inventory_objects_not_visible():
    state = make_state(objects=[("Apple_1", "inventory", (0, 0), 1)])
    assert "Apple_1" not in state.visible_ids()
    assert state.inventory() == ["Apple_1"]


# ---------------------------------------------------------------------------
# Metadata schema
# ---------------------------------------------------------------------------

def test_metadata_entry_schema():
    state = make_state(fixtures=[("Sink_1", "Sink", (0, 2))],
                       objects=[("Apple_1", "Sink_1", (0, 2), 1)],
                       agent=(0, 0, "S"))
    entry = world.observe(state, step=4).metadata_entry()
    assert entry["img_idx"] == 5
    assert entry["img_filename"] == "000000005.png"
    assert entry["step"] == 4
    log = entry["object_log"]
    assert set(log) == {"visible", "pickupable", "isOpen", "inven_obj",
                        "receptacles", "recep_objs"}
    assert log["visible"] == ["Apple_1", "Sink_1"]
    assert log["pickupable"] == ["Apple_1"]
    assert log["recep_objs"] == {"Sink_1": ["Apple_1"]}


# ---------------------------------------------------------------------------
# Environment stepping
# ---------------------------------------------------------------------------

def test_move_collides_with_bounds_and_fixtures():
    state = make_state(fixtures=[("Sink_1", "Sink", (0, 1))], agent=(0, 0, "S"))
    env = world.Env(state)
    result = env.step(world.Action("MoveAhead"))
    assert result.failure and result.failure_reason == world.FAILURE_COLLISION
    state2 = make_state(agent=(0, 0, "N"))
    result = world.Env(state2).step(world.Action("MoveAhead"))
    assert result.failure_reason == world.FAILURE_COLLISION


def test_pickup_requires_visibility_and_free_hand():
    state = make_state(objects=[("Apple_1", "floor", (0, 1), 0),
                                ("Mug_1", "floor", (0, 2), 0)],
                       agent=(0, 0, "S"))
    env = world.Env(state)
    assert env.apply(world.Action("PickupObject", target="Apple_1")) == world.FAILURE_NONE
    # Hand already full.
    assert env.apply(world.Action("PickupObject", target="Mug_1")) == world.FAILURE_INVALID
    # Behind the agent: not visible.
    state2 = make_state(objects=[("Apple_1", "floor", (0, 1), 0)], agent=(0, 0, "N"))
    assert world.Env(state2).apply(
        world.Action("PickupObject", target="Apple_1")) == world.FAILURE_INVALID


def test_put_side_effects_clean_heat_cool():
    for ftype, flag in [("Sink", "is_clean"), ("Microwave", "is_heated"),
                        ("Fridge", "is_cooled")]:
        state = make_state(fixtures=[(f"{ftype}_1", ftype, (0, 1))],
                           objects=[("Apple_1", "inventory", (0, 0), 1)],
                           agent=(0, 0, "S"))
        env = world.Env(state)
        if state.objects[f"{ftype}_1"].openable:
            assert env.apply(world.Action("OpenObject", target=f"{ftype}_1")) \
                == world.FAILURE_NONE
        assert env.apply(world.Action("PutObject", target="Apple_1",
                                      receptacle=f"{ftype}_1")) == world.FAILURE_NONE
        assert getattr(state.objects["Apple_1"], flag)


def test_put_into_closed_container_fails():
    state = make_state(fixtures=[("Fridge_1", "Fridge", (0, 1))],
                       objects=[("Apple_1", "inventory", (0, 0), 1)],
                       agent=(0, 0, "S"))
    assert world.Env(state).apply(
        world.Action("PutObject", target="Apple_1",
                     receptacle="Fridge_1")) == world.FAILURE_INVALID


def test_slice_requires_knife_in_hand():
    state = make_state(objects=[("Apple_1", "floor", (0, 1), 0),
                                ("Knife_1", "inventory", (0, 0), 1)],
                       agent=(0, 0, "S"))
    env = world.Env(state)
    assert env.apply(world.Action("SliceObject", target="Apple_1")) == world.FAILURE_NONE
    assert state.objects["Apple_1"].is_sliced
    state2 = make_state(objects=[("Apple_1", "floor", (0, 1), 0)], agent=(0, 0, "S"))
    assert world.Env(state2).apply(
        world.Action("SliceObject", target="Apple_1")) == world.FAILURE_INVALID


def test_failed_action_never_mutates_state():
    state = make_state(fixtures=[("Fridge_1", "Fridge", (0, 1))],
                       objects=[("Apple_1", "inventory", (0, 0), 1)],
                       agent=(0, 0, "S"))
    before = state.serialize()
    env = world.Env(state)
    for action in [world.Action("MoveAhead"),
                   world.Action("PutObject", target="Apple_1", receptacle="Fridge_1"),
                   world.Action("PickupObject", target="Apple_1"),
                   world.Action("SliceObject", target="Apple_1")]:
        assert env.apply(action) != world.FAILURE_NONE
        assert state.serialize() == before


def test_goto_object_routes_around_fixtures():
    state = make_state(fixtures=[("Sink_1", "Sink", (2, 0)), ("Fridge_1", "Fridge", (2, 1))],
                       objects=[("Apple_1", "floor", (4, 0), 0)],
                       agent=(0, 0, "E"))
    env = world.Env(state)
    assert env.apply(world.Action("GotoObject", target="Apple_1")) == world.FAILURE_NONE
    hx, hy = world.HEADING_VEC[state.agent.heading]
    faced = (state.agent.cell[0] + hx, state.agent.cell[1] + hy)
    assert (4, 0) in {state.agent.cell, faced}
    assert "Apple_1" in state.visible_ids()


def test_containment_invariant_holds_after_actions():
    state = make_state(fixtures=[("Shelf_1", "Shelf", (0, 1))],
                       objects=[("Box_1", "Shelf_1", (0, 1), 1),
                                ("Pen_1", "Box_1", (0, 1), 1)],
                       agent=(0, 0, "S"))
    assert state.containment_ok()
    env = world.Env(state)
    assert env.apply(world.Action("PickupObject", target="Pen_1")) == world.FAILURE_NONE
    assert env.apply(world.Action("PutObject", target="Pen_1",
                                  receptacle="Box_1")) == world.FAILURE_NONE
    assert state.containment_ok()
    # A receptacle can never be placed inside its own contents.
    assert env.apply(world.Action("PickupObject", target="Box_1")) == world.FAILURE_NONE
    assert env.apply(world.Action("PutObject", target="Box_1",
                                  receptacle="Pen_1")) == world.FAILURE_INVALID


# ---------------------------------------------------------------------------
# Low-level arm and magnet pickup
# ---------------------------------------------------------------------------

def _magnet_state(distance: float) -> world.WorldState:
    """Agent arm endpoint positioned exactly `distance` from the object."""
    state = make_state(objects=[("Apple_1", "floor", (0, 1), 0)],
                       agent=(0, 0, "S"), low_level=True)
    # Object center: (0.5, 1.5, 0.1). Endpoint: (0.5, 0.5+oy, 0.9+oz).
    state.agent.arm_offset = (0.0, 1.0 - distance, -0.8)
    ex, ey, ez = state.arm_endpoint()
    px, py, pz = state.object_position("Apple_1")
    assert math.isclose(math.dist((ex, ey, ez), (px, py, pz)), distance,
                        rel_tol=0, abs_tol=1e-12)
    return state


def test_magnet_radius_default():
    assert world.DEFAULT_MAGNET_RADIUS == 0.4
    assert world.SceneConfig().magnet_radius == 0.4


def test_magnet_pickup_inside_radius_succeeds():
    state = _magnet_state(0.399)
    result = world.magnet_pickup(state, "Apple_1")
    assert not result.failure
    assert state.objects["Apple_1"].parent == "inventory"


def test_magnet_pickup_outside_radius_fails():
    state = _magnet_state(0.401)
    result = world.magnet_pickup(state, "Apple_1")
    assert result.failure and result.failure_reason == world.FAILURE_INVALID
    assert state.objects["Apple_1"].parent == "floor"


def test_move_arm_respects_step_and_reach_limits():
    state = make_state(agent=(3, 3, "S"), low_level=True)
    env = world.Env(state)
    assert env.apply(world.Action("MoveArm", delta=(0.05, 0.0, 0.0))) == world.FAILURE_NONE
    assert env.apply(world.Action("MoveArm", delta=(0.06, 0.0, 0.0))) == world.FAILURE_INVALID
    for _ in range(19):
        assert env.apply(world.Action("MoveArm", delta=(0.05, 0.0, 0.0))) == world.FAILURE_NONE
    # Reach limit (1.0) is now exhausted along x.
    assert env.apply(world.Action("MoveArm", delta=(0.05, 0.0, 0.0))) == world.FAILURE_INVALID


def test_low_level_actions_rejected_in_symbolic_mode():
    state = make_state(objects=[("Apple_1", "floor", (0, 1), 0)], agent=(0, 0, "S"))
    env = world.Env(state)
    assert env.apply(world.Action("MoveArm", delta=(0.01, 0, 0))) == world.FAILURE_INVALID
    assert env.apply(world.Action("PickupMagnet", target="Apple_1")) == world.FAILURE_INVALID
