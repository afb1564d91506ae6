import orthoforge.descriptor_pack as descriptor_pack
import orthoforge.edges as edges
import orthoforge.errors as errors
import orthoforge.fixtures as fixtures
import orthoforge.ground_plane as ground_plane
import orthoforge.inpaint as inpaint
import orthoforge.ortho_raster as ortho_raster
import orthoforge.perspective as perspective
import orthoforge.pipeline as pipeline
import orthoforge.pointcloud_io as pointcloud_io
import orthoforge.rendering as rendering
import orthoforge.retrieval as retrieval
import orthoforge.seeding as seeding
import orthoforge.settings as settings
import orthoforge.wavelets as wavelets


__all__ = [
    'descriptor_pack',
    'edges',
    'errors',
    'fixtures',
    'ground_plane',
    'inpaint',
    'ortho_raster',
    'perspective',
    'pipeline',
    'pointcloud_io',
    'rendering',
    'retrieval',
    'seeding',
    'settings',
    'wavelets'
]
