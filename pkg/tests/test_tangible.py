import json
import random
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from siteboard.tangible import (
    MARKER,
    BrickCode,
    BrickEvent,
    BrickTable,
    ColorCell,
    Detection,
    GridError,
    GridSpec,
    TableError,
    TornScanError,
    add_noise,
    apply_events,
    compose_quadrants,
    decode,
    default_table,
    diff_scans,
    empty_frame,
    housing,
    quantize,
    random_placements,
    read_event_log,
    render,
    render_cells,
    rotate_frame,
    split_quadrants,
    validate_placements,
    write_event_log,
)

R, G, B, Y, K, W, N = (
    ColorCell.RED,
    ColorCell.GREEN,
    ColorCell.BLUE,
    ColorCell.YELLOW,
    ColorCell.BLACK,
    ColorCell.WHITE,
    ColorCell.NEUTRAL,
)

SPEC = GridSpec()
TABLE = default_table()


class TestTable:
    def test_default_table_valid_and_complete(self):
        bricks = TABLE.bricks()
        assert MARKER in bricks
        caps = sorted(b.capacity for b in bricks if b.kind == "Housing")
        assert caps == [40, 100, 250, 500, 1000, 1500]
        assert all(40 <= c <= 1500 for c in caps)

    def test_bundled_file_matches_built_in(self):
        bundled = BrickTable.load(Path(__file__).parent.parent / "data/bricks/default_table.json")
        assert bundled.to_json() == TABLE.to_json()

    def test_rotation_collision_rejected(self):
        # second pattern is a 90-degree rotation of the first
        with pytest.raises(TableError, match="rotation collision"):
            BrickTable(
                [
                    BrickCode(housing(40), ((G, B), (B, G))),
                    BrickCode(housing(100), ((B, G), (G, B))),
                ]
            )

    def test_duplicate_brick_rejected(self):
        with pytest.raises(TableError, match="duplicate"):
            BrickTable([BrickCode(MARKER, ((R,),)), BrickCode(MARKER, ((B,),))])

    def test_neutral_and_white_rejected_in_patterns(self):
        with pytest.raises(TableError, match="Neutral"):
            BrickCode(MARKER, ((N,),))
        with pytest.raises(TableError, match="canvas"):
            BrickCode(MARKER, ((W,),))

    def test_pattern_size_limited(self):
        with pytest.raises(TableError, match="1x1 or 2x2"):
            BrickCode(housing(40), ((R, G, B), (G, B, R), (B, R, G)))

    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "table.json"
        TABLE.save(path)
        loaded = BrickTable.load(path)
        assert loaded.to_json() == TABLE.to_json()
        assert loaded.match(((G, B), (B, G))) == housing(1000)

    def test_bad_json_rejected(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        with pytest.raises(TableError, match="invalid JSON"):
            BrickTable.load(path)

    def test_marker_capacity_rejected(self):
        from siteboard.tangible import BrickType

        with pytest.raises(TableError, match="carry no capacity"):
            BrickType("Marker", 40)


class TestQuantize:
    def test_all_white_image_is_all_neutral(self):
        img = Image.new("RGB", SPEC.pixel_size, (255, 255, 255))
        frame = quantize(img, SPEC)
        assert all(cell is N for row in frame.cells for cell in row)

    def test_red_block_at_3_5(self):
        img = Image.new("RGB", SPEC.pixel_size, (255, 255, 255))
        c = SPEC.cell_px
        for rr in range(3, 5):
            for cc in range(5, 7):
                img.paste((255, 0, 0), (cc * c, rr * c, (cc + 1) * c, (rr + 1) * c))
        frame = quantize(img, SPEC)
        for r in range(SPEC.rows):
            for col in range(SPEC.cols):
                want = R if 3 <= r <= 4 and 5 <= col <= 6 else N
                assert frame.cells[r][col] is want, (r, col)

    def test_noise_does_not_change_labels(self):
        rng = random.Random(5)
        placements = random_placements(rng, TABLE, SPEC, 10)
        img = render(placements, TABLE, SPEC)
        clean = quantize(img, SPEC)
        noisy = quantize(add_noise(img, 0.1, seed=99), SPEC)
        assert noisy.cells == clean.cells

    def test_dimension_mismatch_rejected(self):
        img = Image.new("RGB", (100, 100), (255, 255, 255))
        with pytest.raises(GridError, match="expects"):
            quantize(img, SPEC)

    def test_off_palette_color_is_neutral(self):
        img = Image.new("RGB", SPEC.pixel_size, (128, 128, 128))
        frame = quantize(img, SPEC)
        assert all(cell is N for row in frame.cells for cell in row)


class TestDecode:
    def test_empty_frame(self):
        res = decode(empty_frame(SPEC), TABLE)
        assert res.detections == frozenset()
        assert res.diagnostics == ()

    def test_marker_and_housing(self):
        placements = [Detection(MARKER, (0, 0)), Detection(housing(500), (10, 10))]
        res = decode(render_cells(placements, TABLE, SPEC), TABLE)
        assert res.detections == frozenset(placements)
        assert res.diagnostics == ()

    def test_unknown_pattern_is_diagnostic_not_detection(self):
        grid = [[N] * SPEC.cols for _ in range(SPEC.rows)]
        for r, c in ((4, 4), (4, 5), (5, 4), (5, 5)):
            grid[r][c] = R  # solid 2x2 red: not in the default table
        from siteboard.tangible import CellFrame

        res = decode(CellFrame(tuple(tuple(r) for r in grid), scan_seq=1), TABLE)
        assert res.detections == frozenset()
        assert len(res.diagnostics) == 1
        assert res.diagnostics[0].reason == "pattern not in table"
        assert res.diagnostics[0].bbox == (4, 4, 5, 5)

    def test_non_square_component_is_diagnostic(self):
        grid = [[N] * SPEC.cols for _ in range(SPEC.rows)]
        for r, c in ((8, 8), (8, 9), (8, 10)):
            grid[r][c] = G
        from siteboard.tangible import CellFrame

        res = decode(CellFrame(tuple(tuple(r) for r in grid), scan_seq=1), TABLE)
        assert res.detections == frozenset()
        assert res.diagnostics[0].reason == "not a code-sized square"

    def test_sparse_square_is_diagnostic(self):
        grid = [[N] * SPEC.cols for _ in range(SPEC.rows)]
        for r, c in ((8, 8), (8, 9), (9, 8)):
            grid[r][c] = G
        from siteboard.tangible import CellFrame

        res = decode(CellFrame(tuple(tuple(r) for r in grid), scan_seq=1), TABLE)
        assert res.detections == frozenset()
        assert res.diagnostics[0].reason == "sparse square region"

    def test_rotated_brick_detected_as_same_type(self):
        # H1500 pattern rotated 90 degrees still decodes to H1500
        grid = [[N] * SPEC.cols for _ in range(SPEC.rows)]
        rotated = ((Y, R), (R, Y))
        for dr in range(2):
            for dc in range(2):
                grid[6 + dr][6 + dc] = rotated[dr][dc]
        from siteboard.tangible import CellFrame

        res = decode(CellFrame(tuple(tuple(r) for r in grid), scan_seq=1), TABLE)
        assert res.detections == frozenset({Detection(housing(1500), (6, 6))})


def _rotated_anchor(at, k, turns, n):
    r, c = at
    for _ in range(turns % 4):
        r, c = c, n - r - k
    return (r, c)


class TestRoundTrip:
    def test_pixel_round_trip_many_random_frames(self):
        rng = random.Random(42)
        total = 0
        for trial in range(60):
            placements = random_placements(rng, TABLE, SPEC, rng.randrange(1, 14))
            total += len(placements)
            img = render(placements, TABLE, SPEC, scan_seq=trial)
            res = decode(quantize(img, SPEC, scan_seq=trial), TABLE)
            assert res.detections == frozenset(placements), trial
            assert res.diagnostics == ()
            noisy = decode(quantize(add_noise(img, 0.1, seed=trial), SPEC), TABLE)
            assert noisy.detections == frozenset(placements), trial
        assert total > 300

    def test_round_trip_under_global_rotation(self):
        rng = random.Random(7)
        placements = random_placements(rng, TABLE, SPEC, 10)
        frame = render_cells(placements, TABLE, SPEC)
        for turns in range(4):
            rotated = rotate_frame(frame, turns)
            expected = frozenset(
                Detection(d.brick, _rotated_anchor(d.at, TABLE.size_of(d.brick), turns, SPEC.rows))
                for d in placements
            )
            assert decode(rotated, TABLE).detections == expected, turns


class TestQuadrants:
    def test_all_neutral_quadrants(self):
        quads = split_quadrants(empty_frame(SPEC, scan_seq=3), SPEC)
        composed = compose_quadrants(quads, SPEC)
        assert composed == empty_frame(SPEC, scan_seq=3)

    def test_seam_straddling_brick_decodes_identically(self):
        # anchor (15,15) puts a 2x2 brick across both seams of a 32x32 grid
        placements = [Detection(housing(1000), (15, 15)), Detection(housing(40), (0, 15))]
        frame = render_cells(placements, TABLE, SPEC, scan_seq=9)
        composed = compose_quadrants(split_quadrants(frame, SPEC), SPEC)
        assert composed == frame
        assert decode(composed, TABLE).detections == decode(frame, TABLE).detections

    def test_torn_scan_rejected(self):
        quads = list(split_quadrants(empty_frame(SPEC, scan_seq=5), SPEC))
        from siteboard.tangible import CellFrame

        quads[3] = CellFrame(cells=quads[3].cells, scan_seq=6)
        with pytest.raises(TornScanError, match="torn"):
            compose_quadrants(quads, SPEC)

    def test_wrong_quadrant_shape_rejected(self):
        quads = list(split_quadrants(empty_frame(SPEC), SPEC))
        quads[0] = empty_frame(SPEC)  # full-size frame in a quadrant slot
        with pytest.raises(GridError, match="quadrant 0"):
            compose_quadrants(quads, SPEC)


class TestDiffScans:
    def _decode_of(self, placements, seq):
        return decode(render_cells(placements, TABLE, SPEC, scan_seq=seq), TABLE)

    def test_identical_scans_yield_nothing(self):
        a = self._decode_of([Detection(MARKER, (2, 2))], 1)
        b = self._decode_of([Detection(MARKER, (2, 2))], 2)
        assert diff_scans(a, b) == []

    def test_single_placement(self):
        a = self._decode_of([], 1)
        b = self._decode_of([Detection(MARKER, (2, 2))], 2)
        events = diff_scans(a, b)
        assert events == [BrickEvent("Placed", MARKER, at=(2, 2), scan_seq=2)]

    def test_move_pairs_disappearance_with_appearance(self):
        a = self._decode_of([Detection(MARKER, (2, 2)), Detection(housing(40), (20, 20))], 1)
        b = self._decode_of([Detection(MARKER, (7, 7)), Detection(housing(40), (20, 20))], 2)
        events = diff_scans(a, b)
        assert events == [BrickEvent("Moved", MARKER, at=(7, 7), from_=(2, 2), scan_seq=2)]

    def test_event_ordering_removed_moved_placed(self):
        a = self._decode_of(
            [Detection(housing(100), (0, 0)), Detection(MARKER, (10, 10))], 1
        )
        b = self._decode_of(
            [Detection(MARKER, (12, 12)), Detection(housing(500), (4, 4))], 2
        )
        events = diff_scans(a, b)
        assert [e.action for e in events] == ["Removed", "Moved", "Placed"]
        assert events[0].brick == housing(100)
        assert events[1].from_ == (10, 10) and events[1].at == (12, 12)
        assert events[2].brick == housing(500)

    def test_greedy_pairing_prefers_nearest(self):
        a = self._decode_of([Detection(MARKER, (0, 0)), Detection(MARKER, (20, 20))], 1)
        b = self._decode_of([Detection(MARKER, (0, 3)), Detection(MARKER, (28, 28))], 2)
        events = diff_scans(a, b)
        moves = {(e.from_, e.at) for e in events}
        assert moves == {((0, 0), (0, 3)), ((20, 20), (28, 28))}

    def test_apply_events_reconstructs_current(self):
        rng = random.Random(13)
        for trial in range(40):
            prev = self._decode_of(random_placements(rng, TABLE, SPEC, rng.randrange(0, 10)), 1)
            curr = self._decode_of(random_placements(rng, TABLE, SPEC, rng.randrange(0, 10)), 2)
            events = diff_scans(prev, curr)
            assert apply_events(prev.detections, events) == curr.detections, trial
            assert diff_scans(curr, curr) == []


class TestPlacementValidation:
    def test_overlap_rejected(self):
        with pytest.raises(GridError, match="overlaps"):
            validate_placements(
                [Detection(housing(40), (0, 0)), Detection(housing(100), (1, 1))], TABLE, SPEC
            )

    def test_adjacency_rejected(self):
        with pytest.raises(GridError, match="gap"):
            validate_placements(
                [Detection(housing(40), (0, 0)), Detection(housing(100), (0, 2))], TABLE, SPEC
            )

    def test_diagonal_contact_allowed(self):
        placements = [Detection(housing(40), (0, 0)), Detection(housing(100), (2, 2))]
        frame = render_cells(placements, TABLE, SPEC)
        assert decode(frame, TABLE).detections == frozenset(placements)

    def test_footprint_outside_grid_rejected(self):
        with pytest.raises(GridError, match="leaves the grid"):
            validate_placements([Detection(housing(40), (31, 0))], TABLE, SPEC)

    def test_random_placements_always_valid(self):
        for seed in range(10):
            rng = random.Random(seed)
            placements = random_placements(rng, TABLE, SPEC, 20)
            assert validate_placements(placements, TABLE, SPEC)


class TestEventLog:
    def test_ndjson_round_trip(self, tmp_path):
        events = [
            BrickEvent("Placed", housing(500), at=(3, 4), scan_seq=7),
            BrickEvent("Moved", MARKER, at=(5, 6), from_=(1, 1), scan_seq=8),
            BrickEvent("Removed", housing(40), at=(9, 9), scan_seq=9),
        ]
        path = tmp_path / "events.ndjson"
        write_event_log(events, path)
        assert read_event_log(path) == events
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 3
        assert json.loads(lines[1])["from"] == [1, 1]

    def test_moved_requires_from(self):
        with pytest.raises(GridError, match="from"):
            BrickEvent("Moved", MARKER, at=(5, 6), scan_seq=1)
