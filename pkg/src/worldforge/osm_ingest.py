"""OpenStreetMap XML ingestion.

Parses OSM v0.6 XML, classifies tagged ways into scene semantics, and
projects geodetic coordinates into a local metric frame with a simple
equirectangular projection around a chosen origin (good below city scale,
trivially invertible).
"""
from __future__ import annotations

import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .geom import ensure_ccw, polygon_is_simple

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_STOREY_M = 3.0
DEFAULT_BUILDING_HEIGHT_M = 9.0


class MalformedXml(ValueError):
    pass


class DanglingNodeRef(ValueError):
    pass


class OutOfRange(ValueError):
    pass


class SemanticClass(Enum):
    Building = "building"
    Road = "road"
    Highway = "highway"
    PedestrianPath = "pedestrian_path"
    Railway = "railway"
    Water = "water"
    Forest = "forest"
    Vegetation = "vegetation"
    Unknown = "unknown"


AREA_CLASSES = {SemanticClass.Building, SemanticClass.Water,
                SemanticClass.Forest, SemanticClass.Vegetation}
WAY_CLASSES = {SemanticClass.Road, SemanticClass.Highway,
               SemanticClass.PedestrianPath, SemanticClass.Railway}


@dataclass
class OsmWay:
    way_id: int
    node_ids: list[int]
    tags: dict[str, str]


@dataclass
class OsmDocument:
    nodes: dict[int, tuple[float, float]]  # id -> (lat, lon) degrees
    ways: list[OsmWay]


@dataclass
class Footprint:
    sem_class: SemanticClass
    polygon: np.ndarray  # (n, 2) meters, CCW, not closed
    height: float = 0.0
    roof_shape: str = "flat"


@dataclass
class WayLine:
    sem_class: SemanticClass
    polyline: np.ndarray  # (n, 2) meters
    width: float | None = None


@dataclass
class SemanticMap:
    origin: tuple[float, float]  # (lat, lon) degrees
    footprints: list[Footprint] = field(default_factory=list)
    ways: list[WayLine] = field(default_factory=list)


def parse_osm(xml_text: str) -> OsmDocument:
    """Parse OSM v0.6 XML into nodes and tagged ways.

    Unknown elements are skipped; a way referencing a missing node raises
    DanglingNodeRef.  Ways with fewer than two node refs are dropped.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise MalformedXml(f"invalid OSM XML: {exc}") from exc
    nodes: dict[int, tuple[float, float]] = {}
    ways: list[OsmWay] = []
    for el in root:
        if el.tag == "node":
            try:
                nodes[int(el.attrib["id"])] = (float(el.attrib["lat"]),
                                               float(el.attrib["lon"]))
            except (KeyError, ValueError) as exc:
                raise MalformedXml(f"bad node element: {exc}") from exc
        elif el.tag == "way":
            try:
                wid = int(el.attrib["id"])
            except (KeyError, ValueError) as exc:
                raise MalformedXml(f"bad way element: {exc}") from exc
            refs = [int(nd.attrib["ref"]) for nd in el.findall("nd")]
            tags = {t.attrib["k"]: t.attrib.get("v", "") for t in el.findall("tag")}
            if len(refs) < 2:
                continue
            ways.append(OsmWay(wid, refs, tags))
        # relations and anything else: skipped
    for way in ways:
        for ref in way.node_ids:
            if ref not in nodes:
                raise DanglingNodeRef(
                    f"way {way.way_id} references missing node {ref}")
    return OsmDocument(nodes, ways)


def load_osm(path: str | Path) -> OsmDocument:
    return parse_osm(Path(path).read_text(encoding="utf-8"))


def classify_way(tags: dict[str, str]) -> SemanticClass:
    """Total, deterministic tag classification (fixed priority order)."""
    building = tags.get("building")
    if building is not None and building != "no":
        return SemanticClass.Building
    highway = tags.get("highway")
    if highway is not None:
        if highway in ("motorway", "trunk"):
            return SemanticClass.Highway
        if highway in ("footway", "path"):
            return SemanticClass.PedestrianPath
        return SemanticClass.Road
    if "railway" in tags:
        return SemanticClass.Railway
    if tags.get("natural") == "water" or "waterway" in tags:
        return SemanticClass.Water
    if tags.get("landuse") == "forest" or tags.get("natural") == "wood":
        return SemanticClass.Forest
    if tags.get("landuse") in ("grass", "meadow"):
        return SemanticClass.Vegetation
    return SemanticClass.Unknown


def project_latlon(lat: float, lon: float, origin: tuple[float, float]) -> tuple[float, float]:
    """Local equirectangular projection in meters around origin."""
    if not (abs(lat) <= 90.0 and abs(lon) <= 180.0):
        raise OutOfRange(f"coordinates out of geodetic range: {lat}, {lon}")
    lat0, lon0 = origin
    if not (abs(lat0) <= 90.0 and abs(lon0) <= 180.0):
        raise OutOfRange(f"origin out of geodetic range: {origin}")
    x = EARTH_RADIUS_M * math.radians(lon - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * math.radians(lat - lat0)
    return x, y


def _parse_meters(text: str) -> float | None:
    """Parse OSM length values like '10', '10.5 m', '10m'."""
    t = text.strip().lower().removesuffix("m").strip()
    try:
        return float(t)
    except ValueError:
        return None


def _building_height(tags: dict[str, str]) -> float:
    h = tags.get("height")
    if h is not None:
        v = _parse_meters(h)
        if v is not None and v > 0:
            return v
    levels = tags.get("building:levels", tags.get("levels"))
    if levels is not None:
        try:
            return float(levels) * DEFAULT_STOREY_M
        except ValueError:
            pass
    return DEFAULT_BUILDING_HEIGHT_M


def build_semantic_map(doc: OsmDocument, origin: tuple[float, float]) -> SemanticMap:
    """Project and classify a parsed document into a local metric map.

    Closed ways with area classes become CCW footprints; everything else of
    a renderable class becomes a polyline.  Non-simple footprint polygons
    are dropped.
    """
    out = SemanticMap(origin=(float(origin[0]), float(origin[1])))
    for way in doc.ways:
        sem = classify_way(way.tags)
        if sem is SemanticClass.Unknown:
            continue
        for ref in way.node_ids:
            if ref not in doc.nodes:
                raise DanglingNodeRef(f"way {way.way_id} references missing node {ref}")
        pts = np.array([project_latlon(*doc.nodes[r], origin) for r in way.node_ids])
        closed = way.node_ids[0] == way.node_ids[-1] and len(way.node_ids) >= 4
        if sem in AREA_CLASSES:
            if not closed:
                continue
            poly = pts[:-1]
            if len(poly) < 3 or not polygon_is_simple(poly):
                continue
            fp = Footprint(sem, ensure_ccw(poly))
            if sem is SemanticClass.Building:
                fp.height = _building_height(way.tags)
                fp.roof_shape = "gable" if way.tags.get("roof:shape", "").startswith("gabl") \
                    else "flat"
            out.footprints.append(fp)
        else:
            width = None
            if "width" in way.tags:
                width = _parse_meters(way.tags["width"])
            out.ways.append(WayLine(sem, pts, width))
    return out


# ----------------------------------------------------------------------
# debug JSON round trip

def semantic_map_to_json(smap: SemanticMap) -> str:
    doc = {
        "origin": list(smap.origin),
        "footprints": [
            {"class": fp.sem_class.value, "height": fp.height,
             "roof": fp.roof_shape, "polygon": fp.polygon.tolist()}
            for fp in smap.footprints
        ],
        "ways": [
            {"class": w.sem_class.value, "width": w.width,
             "polyline": w.polyline.tolist()}
            for w in smap.ways
        ],
    }
    return json.dumps(doc, indent=2)


def semantic_map_from_json(text: str) -> SemanticMap:
    doc = json.loads(text)
    smap = SemanticMap(origin=tuple(doc["origin"]))
    for fp in doc["footprints"]:
        smap.footprints.append(Footprint(
            SemanticClass(fp["class"]), np.array(fp["polygon"], dtype=float),
            fp["height"], fp["roof"]))
    for w in doc["ways"]:
        smap.ways.append(WayLine(
            SemanticClass(w["class"]), np.array(w["polyline"], dtype=float),
            w["width"]))
    return smap
