from nv_transparent.cli import main

raise SystemExit(main())
