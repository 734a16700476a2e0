from winoint.cli import main

main()
