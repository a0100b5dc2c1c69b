import math

import numpy as np
import pytest

from exaug.errors import InvalidInputError
from exaug.geometry import CameraModel, Pose2D, Transform3D, mount_transform
from exaug.scene import (
    BACKGROUND, Box, Cylinder, GroundPlane, SceneDescription, SuiteParams, blocked_start_scene,
    camera_world_pose, clearance, corridor_exists, generate_suite, narrow_gap_scene, raycast,
    render_at, scene_cloud,
)


def wide_camera(width=3600, height=9, height_m=0.5):
    """Equirectangular strip around the horizon."""
    return CameraModel.equirectangular(width, height, -math.pi, math.pi,
                                       -math.radians(0.45 * height / 9),
                                       math.radians(0.45 * height / 9),
                                       mount=mount_transform((0.0, 0.0, height_m)))


class TestRaycast:
    def test_cylinder_silhouette_width(self):
        scene = SceneDescription((Cylinder((3.0, 0.0), 0.5, 0.0, 1.0),))
        cam = wide_camera()
        out = render_at(scene, Pose2D(), cam)
        row = out.depth.valid[cam.height // 2]
        expected = 2 * math.asin(0.5 / 3.0) / (2 * math.pi / cam.width)
        assert abs(row.sum() - expected) <= 1.0
        # nearest hit straight ahead is the cylinder surface at 2.5 m
        assert out.depth.values[cam.height // 2][row].min() == pytest.approx(2.5, abs=1e-3)

    def test_ground_plane_range(self):
        cam = CameraModel.equirectangular(8, 40, -0.2, 0.2, -1.2, -0.1,
                                          mount=mount_transform((0.0, 0.0, 0.7)))
        out = render_at(SceneDescription((GroundPlane(),)), Pose2D(), cam)
        assert out.depth.valid.all()
        lat = cam.lat_max - (np.arange(cam.height) + 0.5) / cam.height * (cam.lat_max - cam.lat_min)
        # a ray at elevation lat meets the plane z=0 after 0.7 / sin(-lat), for any azimuth
        expected = np.broadcast_to((0.7 / np.sin(-lat))[:, None], out.depth.values.shape)
        np.testing.assert_allclose(out.depth.values, expected, rtol=1e-9)

    def test_pinhole_depth_is_axis_distance(self):
        wall = Box((4.0, 0.0, 1.0), (0.2, 20.0, 8.0))
        cam = CameraModel.pinhole(31, 21, 15.0, mount=mount_transform((0.5, 0.0, 1.0)))
        out = render_at(SceneDescription((wall,)), Pose2D(), cam)
        # frontal wall at x = 3.9, camera at x = 0.5: constant z-depth 3.4
        np.testing.assert_allclose(out.depth.values[out.depth.valid], 3.4, atol=1e-9)
        assert out.depth.valid.all()

    def test_miss_is_background(self):
        cam = CameraModel.pinhole(8, 6, 5.0, mount=mount_transform((0.0, 0.0, 1.0), pitch=-0.6))
        out = render_at(SceneDescription(()), Pose2D(), cam)
        assert not out.depth.valid.any()
        assert np.all(out.color.rgb == BACKGROUND)

    def test_max_range(self):
        wall = Box((30.0, 0.0, 1.0), (0.2, 80.0, 80.0))
        cam = CameraModel.pinhole(8, 6, 5.0, mount=mount_transform((0.0, 0.0, 1.0)))
        scene = SceneDescription((wall,))
        assert not render_at(scene, Pose2D(), cam).depth.valid.any()
        assert render_at(scene, Pose2D(), cam, max_range=50.0).depth.valid.all()
        with pytest.raises(InvalidInputError):
            raycast(scene, cam, Transform3D(), max_range=0.0)

    def test_nearest_primitive_occludes(self):
        near = Box((2.0, 0.0, 0.5), (0.2, 0.4, 1.0), (255, 0, 0))
        far = Box((4.0, 0.0, 0.5), (0.2, 4.0, 1.0), (0, 0, 255))
        cam = CameraModel.pinhole(9, 9, 10.0, mount=mount_transform((0.0, 0.0, 0.5)))
        out = render_at(SceneDescription((far, near)), Pose2D(), cam)
        assert out.color.rgb[4, 4, 0] > 0 and out.color.rgb[4, 4, 2] == 0
        assert out.depth.values[4, 4] == pytest.approx(1.9)

    def test_robot_pose_moves_camera(self):
        wall = Box((0.0, 5.0, 1.0), (20.0, 0.2, 2.0))
        cam = CameraModel.pinhole(5, 5, 4.0, mount=mount_transform((0.0, 0.0, 1.0)))
        out = render_at(SceneDescription((wall,)), Pose2D(0.0, 1.0, math.pi / 2), cam)
        assert out.depth.values[2, 2] == pytest.approx(3.9)

    def test_camera_world_pose(self):
        mount = mount_transform((0.2, 0.0, 0.5))
        pose = camera_world_pose(Pose2D(1.0, 2.0, 0.0), mount)
        np.testing.assert_allclose(pose.translation, [1.2, 2.0, 0.5])


class TestSceneCloud:
    def test_wall_in_robot_frame(self):
        wall = Box((2.05, 0.0, 1.0), (0.1, 10.0, 2.0))
        cam = CameraModel.pinhole(21, 15, 10.0, mount=mount_transform((0.3, 0.0, 0.5)))
        cloud = scene_cloud(SceneDescription((wall,)), Pose2D(), cam)
        assert cloud.frame == "robot"
        np.testing.assert_allclose(cloud.points[cloud.valid][:, 0], 2.0, atol=1e-9)

    def test_heights_are_robot_frame(self):
        cam = CameraModel.pinhole(21, 15, 10.0, mount=mount_transform((0.0, 0.0, 0.5), pitch=0.5))
        cloud = scene_cloud(SceneDescription((GroundPlane(),)), Pose2D(3.0, 1.0, 0.4), cam)
        np.testing.assert_allclose(cloud.points[cloud.valid][:, 2], 0.0, atol=1e-9)


class TestClearance:
    def test_cylinder_and_box(self):
        scene = SceneDescription((Cylinder((0.0, 0.0), 0.5), Box((3.0, 0.0, 0.5), (1.0, 1.0, 1.0))))
        gaps = clearance(scene, [[1.5, 0.0], [0.0, 2.0], [3.0, 0.0]])
        np.testing.assert_allclose(gaps, [1.0, 1.5, 0.0])

    def test_box_corner(self):
        scene = SceneDescription((Box((0.0, 0.0, 0.5), (2.0, 2.0, 1.0)),))
        assert clearance(scene, [2.0, 2.0]) == pytest.approx(math.sqrt(2))

    def test_overhead_obstacle_ignored(self):
        scene = SceneDescription((Box((0.0, 0.0, 2.0), (1.0, 1.0, 0.5)),))
        assert math.isinf(clearance(scene, [0.0, 0.0], body_top=0.65))

    def test_ground_is_not_obstacle(self):
        assert math.isinf(clearance(SceneDescription((GroundPlane(),)), [0.0, 0.0]))


class TestSerialization:
    def test_json_round_trip(self):
        scene = narrow_gap_scene()
        back = SceneDescription.from_json(scene.to_json())
        assert back.to_dict() == scene.to_dict()

    def test_invalid_primitive(self):
        with pytest.raises(InvalidInputError):
            Cylinder((0.0, 0.0), -1.0)
        with pytest.raises(InvalidInputError):
            Box((0.0, 0.0, 0.0), (1.0, 0.0, 1.0))


class TestGeneration:
    def test_deterministic(self):
        a = [s.to_dict() for s in generate_suite(11, 3)]
        b = [s.to_dict() for s in generate_suite(11, 3)]
        assert a == b

    def test_scene_depends_only_on_index(self):
        a = generate_suite(11, 3)
        b = generate_suite(11, 5)
        assert [s.to_dict() for s in a] == [s.to_dict() for s in b[:3]]

    def test_certified_corridor(self):
        params = SuiteParams()
        for scene in generate_suite(5, 6, params):
            assert corridor_exists(scene, params.clearance)
            route = np.array([[p.x, p.y] for p in scene.route()])
            assert clearance(scene, route).min() >= params.subgoal_keepout
            assert 1 <= len(scene.obstacles) <= 3

    def test_obstacle_free(self):
        scenes = generate_suite(5, 3, SuiteParams(n_obstacles=(0, 0)))
        assert all(len(s.obstacles) == 0 for s in scenes)

    def test_blocked_corridor_detected(self):
        wall = Box((1.0, 0.0, 0.5), (0.2, 20.0, 1.0))
        scene = SceneDescription((wall,), Pose2D(), Pose2D(2.0, 0.0))
        assert not corridor_exists(scene, 0.3)

    def test_count_validated(self):
        with pytest.raises(InvalidInputError):
            generate_suite(0, 0)


class TestFixtures:
    def test_narrow_gap_width(self):
        scene = narrow_gap_scene()
        # the straight line passes 0.25 m from both posts
        assert clearance(scene, [1.5, 0.0]) == pytest.approx(0.25)

    def test_blocked_start_is_enclosed(self):
        scene = blocked_start_scene()
        assert clearance(scene, [0.0, 0.0]) == pytest.approx(0.19)
        assert not corridor_exists(scene, 0.15, margin=0.5)
